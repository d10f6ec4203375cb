//! Stage runner. Each stage reads its inputs from the config paths or from
//! earlier stage outputs in the run directory, so stages can also be re-run
//! one at a time.

mod annotate;
mod build;
mod crosslingual;
mod prep;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use forge_core::corpus::{sentencize, BookText, Language};
use forge_core::dataset::{read_dataset, Instance, Split};
use forge_core::lexicon::Lexicon;
use forge_core::seed::derive_seed;
use serde::Serialize;

use crate::config::{parse_split_table, PipelineConfig};
use crate::manifest::{file_digest, list_files, rel_key, Manifest, StageRecord, StageStatus, MANIFEST_FILE};

pub use annotate::{scripted_answers, task_for_sample, ScriptedAnswer};
pub use build::{build_unsup_pairs, merge_weak, validate_file, DATASET};
pub use crosslingual::{align_tables, project_instances};
pub use prep::lexicon_report;
pub use train::{eval_baseline, gradcheck, layout_preview, predict_split, CachedEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Lexicon,
    Sentencize,
    Filter,
    Cluster,
    Annotate,
    Build,
    Align,
    Project,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Lexicon,
        Stage::Sentencize,
        Stage::Filter,
        Stage::Cluster,
        Stage::Annotate,
        Stage::Build,
        Stage::Align,
        Stage::Project,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Lexicon => "lexicon",
            Stage::Sentencize => "sentencize",
            Stage::Filter => "filter",
            Stage::Cluster => "cluster",
            Stage::Annotate => "annotate",
            Stage::Build => "build",
            Stage::Align => "align",
            Stage::Project => "project",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// A configured input path that does not exist.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: anyhow::Error,
}

impl StageFailure {
    pub fn missing_input(&self) -> bool {
        self.error.chain().any(|e| e.is::<MissingInput>())
    }

    /// 2 for a missing input, 1 for any other stage error.
    pub fn exit_code(&self) -> i32 {
        if self.missing_input() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={}: {:#}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

pub(crate) enum Outcome {
    Done,
    Skipped(String),
}

pub struct Run {
    pub cfg: PipelineConfig,
    pub base: PathBuf,
    pub out: PathBuf,
    pub manifest: Manifest,
    outputs: BTreeMap<String, String>,
}

impl Run {
    /// Open a run directory. A manifest left by an earlier run with the same
    /// config is extended; otherwise a fresh manifest is started.
    pub fn new(cfg: PipelineConfig, base: &Path, out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating run directory {}", out.display()))?;
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        let fresh = Manifest::new(&cfg, &base);
        let manifest = match Manifest::load(&out.join(MANIFEST_FILE)) {
            Ok(m) if m.config_hash == fresh.config_hash && m.base_dir == base => m,
            _ => fresh,
        };
        Ok(Self { cfg, base, out: out.to_path_buf(), manifest, outputs: BTreeMap::new() })
    }

    pub fn seed(&self, label: &str) -> u64 {
        derive_seed(self.cfg.seed, label)
    }

    pub fn run_stages(&mut self, stages: &[Stage]) -> Result<(), StageFailure> {
        let mut result = Ok(());
        for &stage in stages {
            self.outputs.clear();
            let outcome = self.dispatch(stage);
            let (status, note) = match &outcome {
                Ok(Outcome::Done) => (StageStatus::Ok, None),
                Ok(Outcome::Skipped(why)) => (StageStatus::Skipped, Some(why.clone())),
                Err(e) => (StageStatus::Failed, Some(format!("{e:#}"))),
            };
            self.manifest.record(StageRecord {
                stage: stage.name().into(),
                status,
                note,
                outputs: std::mem::take(&mut self.outputs),
            });
            if let Err(error) = outcome {
                self.manifest.failed_stage = Some(stage.name().into());
                result = Err(StageFailure { stage, error });
                break;
            }
            if self.manifest.failed_stage.as_deref() == Some(stage.name()) {
                self.manifest.failed_stage = None;
            }
        }
        if let Err(e) = self.manifest.write(&self.out) {
            if result.is_ok() {
                result = Err(StageFailure { stage: *stages.last().unwrap_or(&Stage::Lexicon), error: e });
            }
        }
        result
    }

    fn dispatch(&mut self, stage: Stage) -> Result<Outcome> {
        match stage {
            Stage::Lexicon => prep::lexicon(self),
            Stage::Sentencize => prep::sentencize_books(self),
            Stage::Filter => prep::filter(self),
            Stage::Cluster => prep::cluster(self),
            Stage::Annotate => annotate::run(self),
            Stage::Build => build::run(self),
            Stage::Align => crosslingual::align(self),
            Stage::Project => crosslingual::project(self),
            Stage::Train => train::run(self),
            Stage::Eval => train::eval(self),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    /// Resolve a configured input, record its digest, and fail with
    /// [`MissingInput`] when it is absent.
    pub(crate) fn input(&mut self, p: &Path) -> Result<PathBuf> {
        let path = self.resolve(p);
        if !path.exists() {
            return Err(MissingInput(path).into());
        }
        let files = if path.is_dir() { list_files(&self.base, &path)? } else { vec![path.strip_prefix(&self.base).unwrap_or(&path).to_path_buf()] };
        for rel in files {
            let digest = file_digest(&self.base.join(&rel))?;
            self.manifest.inputs.insert(rel_key(&rel), digest);
        }
        Ok(path)
    }

    pub(crate) fn optional_input(&mut self, p: Option<&PathBuf>) -> Result<Option<PathBuf>> {
        match p {
            Some(p) if self.resolve(p).exists() => self.input(p).map(Some),
            _ => Ok(None),
        }
    }

    pub(crate) fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes.as_ref()).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(rel.to_string(), crate::manifest::sha256_hex(bytes.as_ref()));
        Ok(())
    }

    pub(crate) fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(rel, text)
    }

    pub(crate) fn write_jsonl<'a, T: Serialize + 'a>(&mut self, rel: &str, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item)?);
            text.push('\n');
        }
        self.write(rel, text)
    }

    /// Record a file some other component wrote into the run directory.
    pub(crate) fn track(&mut self, rel: &str) -> Result<()> {
        let digest = file_digest(&self.out.join(rel))?;
        self.outputs.insert(rel.to_string(), digest);
        Ok(())
    }

    pub(crate) fn read_output(&self, rel: &str, producer: Stage) -> Result<String> {
        let path = self.out.join(rel);
        std::fs::read_to_string(&path)
            .with_context(|| format!("reading {} (run the {producer} stage first)", path.display()))
    }

    pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(&self, rel: &str, producer: Stage) -> Result<Vec<T>> {
        let text = self.read_output(rel, producer)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{rel} line {}", i + 1)))
            .collect()
    }

    pub fn lexicon(&mut self) -> Result<Lexicon> {
        let p = self.cfg.paths.lexicon.clone();
        let path = self.input(&p)?;
        Lexicon::load(&path).map_err(|e| anyhow!(e))
    }

    pub fn split_table(&mut self) -> Result<BTreeMap<String, Split>> {
        let p = self.cfg.paths.split_table.clone();
        let path = self.input(&p)?;
        parse_split_table(&std::fs::read_to_string(path)?)
    }

    /// Books of one language, keyed by id, from `<id>.<lang>.txt` files.
    pub fn books(&mut self, language: Language) -> Result<BTreeMap<String, BookText>> {
        let p = self.cfg.paths.books.clone();
        let dir = self.input(&p)?;
        load_books(&dir, language)
    }

    pub(crate) fn dataset(&self) -> Result<Vec<Instance>> {
        let text = self.read_output(build::DATASET, Stage::Build)?;
        read_dataset(&text).map_err(|e| anyhow!(e))
    }
}

pub fn load_books(dir: &Path, language: Language) -> Result<BTreeMap<String, BookText>> {
    let suffix = format!(".{}.txt", language.as_str());
    let mut out = BTreeMap::new();
    for rel in list_files(dir, dir)? {
        let name = rel_key(&rel);
        let Some(id) = name.strip_suffix(&suffix) else { continue };
        let raw = std::fs::read_to_string(dir.join(&rel)).with_context(|| format!("reading book {name}"))?;
        out.insert(id.to_string(), sentencize(id, &raw, language));
    }
    Ok(out)
}
