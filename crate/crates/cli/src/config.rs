//! Pipeline configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use forge_core::dataset::Split;
use forge_core::scorer::Mode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Snippet window in tokens.
    pub window: usize,
    pub cluster_distance: usize,
    pub max_note_words: usize,
    pub unsup_w: usize,
    pub exclude_cluster_traits: bool,
    pub weak_threshold: f64,
    pub null_penalty: f64,
    /// Sentences pooled into each alignment embedding.
    pub align_context: usize,
    pub budgets: Budgets,
    pub paths: Paths,
    pub annotate: AnnotateSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: forge_core::corpus::DEFAULT_WINDOW,
            cluster_distance: forge_core::notes::DEFAULT_CLUSTER_DISTANCE,
            max_note_words: forge_core::notes::DEFAULT_MAX_WORDS,
            unsup_w: forge_core::dataset::DEFAULT_UNSUP_WINDOW,
            exclude_cluster_traits: false,
            weak_threshold: 0.5,
            null_penalty: forge_core::align::DEFAULT_NULL_PENALTY,
            align_context: forge_core::align::DEFAULT_CONTEXT_SENTENCES,
            budgets: Budgets::default(),
            paths: Paths::default(),
            annotate: AnnotateSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub no_hist: usize,
    pub hist_total: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { no_hist: 480, hist_total: 1600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub lexicon: PathBuf,
    /// Directory of `<book>.zh.txt` and optional `<book>.en.txt` files.
    pub books: PathBuf,
    pub notes: PathBuf,
    /// `book_id<TAB>train|dev|test` per line.
    pub split_table: PathBuf,
    /// Scripted annotator answers: `note_id<TAB>trait_id<TAB>yes|no<TAB>character`.
    pub annotations: PathBuf,
    pub characters: Option<PathBuf>,
    /// Directory of `<book>.<lang>.emb` sentence embeddings.
    pub embeddings: Option<PathBuf>,
    pub weak_candidates: Option<PathBuf>,
    pub weak_scores: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            lexicon: "lexicon.tsv".into(),
            books: "books".into(),
            notes: "notes.jsonl".into(),
            split_table: "splits.tsv".into(),
            annotations: "annotations.tsv".into(),
            characters: None,
            embeddings: None,
            weak_candidates: None,
            weak_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub dup_rate: f64,
    pub annotators: Vec<String>,
    /// Chance that a scripted annotator flips its answer.
    pub noise: f64,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        Self { dup_rate: 0.1, annotators: vec!["ann-1".into(), "ann-2".into(), "ann-3".into()], noise: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub modes: Vec<Mode>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: Option<usize>,
    /// Width of the pseudo token embeddings.
    pub dim: usize,
    /// Multiplier on the pseudo token embeddings. Scores are dot products,
    /// so this acts as an inverse softmax temperature.
    pub embed_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            modes: vec![Mode::NoHistory, Mode::CharacterHistory],
            epochs: 10,
            learning_rate: 0.5,
            batch_size: 8,
            patience: Some(5),
            dim: 32,
            embed_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub curve_fractions: Vec<f64>,
    pub curve_mode: Mode,
    pub timeline_window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { curve_fractions: vec![0.25, 0.5, 1.0], curve_mode: Mode::NoHistory, timeline_window: 5 }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).context("parsing config")?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("cluster_distance", self.cluster_distance),
            ("max_note_words", self.max_note_words),
            ("unsup_w", self.unsup_w),
            ("align_context", self.align_context),
            ("budgets.no_hist", self.budgets.no_hist),
            ("budgets.hist_total", self.budgets.hist_total),
            ("train.epochs", self.train.epochs),
            ("train.batch_size", self.train.batch_size),
            ("train.dim", self.train.dim),
            ("eval.timeline_window", self.eval.timeline_window),
        ];
        for (key, v) in positive {
            if v == 0 {
                bail!("{key} must be positive");
            }
        }
        if self.budgets.hist_total < self.budgets.no_hist {
            bail!("budgets.hist_total ({}) is below budgets.no_hist ({})", self.budgets.hist_total, self.budgets.no_hist);
        }
        if !(self.null_penalty > 0.0 && self.null_penalty.is_finite()) {
            bail!("null_penalty must be positive, got {}", self.null_penalty);
        }
        if !(self.train.embed_scale > 0.0 && self.train.embed_scale.is_finite()) {
            bail!("train.embed_scale must be positive, got {}", self.train.embed_scale);
        }
        if !self.weak_threshold.is_finite() {
            bail!("weak_threshold must be finite");
        }
        for (key, p) in [("annotate.dup_rate", self.annotate.dup_rate), ("annotate.noise", self.annotate.noise)] {
            if !(0.0..=1.0).contains(&p) {
                bail!("{key} must lie in [0, 1], got {p}");
            }
        }
        if self.annotate.annotators.is_empty() {
            bail!("annotate.annotators is empty");
        }
        if !(self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite()) {
            bail!("train.learning_rate must be positive");
        }
        if let Some(f) = self.eval.curve_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            bail!("curve fraction {f} outside (0, 1]");
        }
        Ok(())
    }

    /// Canonical JSON used for the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

pub fn parse_split_table(text: &str) -> Result<BTreeMap<String, Split>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (book, split) = line.split_once('\t').with_context(|| format!("split table line {}: expected two columns", i + 1))?;
        let split: Split = split.trim().parse().map_err(|e| anyhow::anyhow!("split table line {}: {e}", i + 1))?;
        if out.insert(book.trim().to_string(), split).is_some() {
            bail!("split table line {}: book {book} listed twice", i + 1);
        }
    }
    Ok(out)
}
