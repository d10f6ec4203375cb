use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use forge_annotate::{Store, StoreConfig};
use forge_core::annotation::AnnotationTask;
use forge_core::corpus::{sentencize, Language};
use forge_core::dataset::Split;
use forge_core::embedding::EmbeddingTable;
use forge_core::eval::{cohen_kappa, Baseline};
use forge_core::lexicon::Lexicon;
use forge_core::scorer::{Mode, GRAD_CHECK_FLOOR};
use forge_cli::manifest::{Manifest, StageStatus};
use forge_cli::pipeline::{self, Run, Stage, StageFailure};
use forge_cli::{demo, PipelineConfig};

#[derive(Parser)]
#[command(name = "forge", version, about = "Build and evaluate situated trait-prediction datasets")]
struct Cli {
    /// Pipeline config (TOML). Defaults to ./forge.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trait table checks.
    Lexicon {
        #[command(subcommand)]
        cmd: LexiconCmd,
    },
    /// Sentence segmentation.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Note filtering and clustering stages.
    Notes {
        #[command(subcommand)]
        cmd: NotesCmd,
    },
    /// Dataset assembly stages.
    Build {
        #[command(subcommand)]
        cmd: BuildCmd,
    },
    /// Align two sentence-embedding files, or without them run the align
    /// and project stages.
    Align {
        #[arg(long, requires = "tgt_emb")]
        src_emb: Option<PathBuf>,
        #[arg(long, requires = "src_emb")]
        tgt_emb: Option<PathBuf>,
        #[arg(long)]
        null_penalty: Option<f64>,
        /// Sentences pooled per embedding row.
        #[arg(long)]
        context: Option<usize>,
        /// Output TSV (stdout when absent).
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Scoring head.
    Scorer {
        #[command(subcommand)]
        cmd: ScorerCmd,
    },
    /// Evaluation.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Labeling service and store.
    Annotate {
        #[command(subcommand)]
        cmd: AnnotateCmd,
    },
    /// Whole-pipeline runs.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
    /// Synthetic demo corpus.
    Demo {
        #[command(subcommand)]
        cmd: DemoCmd,
    },
}

#[derive(Subcommand)]
enum LexiconCmd {
    /// Print counts per polarity and per-language coverage.
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Segment a plain-text book into `k<TAB>start<TAB>end<TAB>text` lines.
    Sentencize {
        input: PathBuf,
        #[arg(long)]
        lang: Language,
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NotesCmd {
    Filter,
    Cluster {
        /// Chaining distance in tokens (strictly below merges).
        #[arg(long)]
        distance: Option<usize>,
    },
}

#[derive(Subcommand)]
enum BuildCmd {
    /// Annotate-import and instance assembly, including the weak merge.
    Instances {
        #[arg(long)]
        exclude_cluster_traits: bool,
    },
    /// Unsupervised pairs over the configured books.
    Unsup {
        #[arg(long)]
        w: Option<usize>,
    },
    /// Report of the weak-label merge alone.
    MergeWeak {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Check a dataset file against the instance invariants.
    Validate {
        /// Dataset file; defaults to the run's build output.
        dataset: Option<PathBuf>,
        /// Books directory for snippet checks.
        #[arg(long)]
        books: Option<PathBuf>,
        #[arg(long, default_value = "zh")]
        lang: Language,
    },
}

#[derive(Subcommand)]
enum ScorerCmd {
    Train {
        #[arg(long)]
        mode: Mode,
    },
    Predict {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    Gradcheck {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Print the laid-out token sequence of one instance.
    Layout {
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        instance: String,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Full evaluation stage.
    Run,
    Baseline {
        #[arg(long)]
        name: Baseline,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Cohen's kappa from a two-column label file or a 2x2 matrix `a,b,c,d`.
    Kappa {
        #[arg(long, conflicts_with = "matrix")]
        pairs: Option<PathBuf>,
        #[arg(long)]
        matrix: Option<String>,
    },
    Curve,
    Timeline,
}

#[derive(Subcommand)]
enum AnnotateCmd {
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "FORGE_DUP_RATE", default_value_t = 0.0)]
        dup_rate: f64,
        #[arg(long, env = "FORGE_STORE_PATH")]
        store: Option<PathBuf>,
    },
    /// Import tasks (JSON lines) into the store.
    Import {
        tasks: PathBuf,
        #[arg(long, env = "FORGE_STORE_PATH")]
        store: PathBuf,
    },
    Export {
        #[arg(long, env = "FORGE_STORE_PATH")]
        store: PathBuf,
    },
    Agreement {
        #[arg(long, env = "FORGE_STORE_PATH")]
        store: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// filter, cluster, annotate, build, align, project, train, eval.
    All,
    /// One named stage.
    Stage { name: Stage },
    /// Re-run every stage from a manifest's recorded config.
    Rerun { manifest: PathBuf },
}

#[derive(Subcommand)]
enum DemoCmd {
    Generate {
        #[arg(default_value = "demo")]
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        demo_seed: u64,
    },
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, PathBuf)> {
    let path = match &cli.config {
        Some(p) => Some(p.clone()),
        None => Some(PathBuf::from("forge.toml")).filter(|p| p.exists()),
    };
    let (mut cfg, base) = match path {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).filter(|b| !b.as_os_str().is_empty()).unwrap_or_else(|| ".".into());
            (PipelineConfig::load(&p)?, base)
        }
        None => (PipelineConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok((cfg, base))
}

fn open_run(cli: &Cli, tweak: impl FnOnce(&mut PipelineConfig)) -> Result<Run> {
    let (mut cfg, base) = load_config(cli)?;
    tweak(&mut cfg);
    cfg.check()?;
    Run::new(cfg, &base, &cli.out)
}

fn stages(run: &mut Run, list: &[Stage]) -> Result<()> {
    let result = run.run_stages(list);
    for st in list {
        let Some(rec) = run.manifest.stage(st.name()) else { continue };
        match (&rec.status, &rec.note) {
            (StageStatus::Ok, _) => eprintln!("{:<10} ok ({} outputs)", st.name(), rec.outputs.len()),
            (StageStatus::Skipped, note) => eprintln!("{:<10} skipped: {}", st.name(), note.as_deref().unwrap_or("")),
            (StageStatus::Failed, _) => eprintln!("{:<10} failed", st.name()),
        }
        if rec.status == StageStatus::Failed {
            break;
        }
    }
    result.map_err(anyhow::Error::new)
}

const ALL: [Stage; 10] = Stage::ALL;

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_or_print(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn open_store(path: &Path, dup_rate: f64, seed: u64) -> Result<Store> {
    Ok(Store::open(StoreConfig { dup_rate, seed, path: Some(path.to_path_buf()), snapshot_every: 1000 })?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e.downcast_ref::<StageFailure>() {
                Some(f) => f.exit_code(),
                None => 1,
            };
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Lexicon { cmd: LexiconCmd::Validate { path } } => {
            let lex = Lexicon::load(path).map_err(|e| {
                let missing = !path.exists();
                let err = anyhow!(e);
                if missing {
                    anyhow::Error::new(StageFailure { stage: Stage::Lexicon, error: pipeline::MissingInput(path.clone()).into() })
                } else {
                    err
                }
            })?;
            print_json(&pipeline::lexicon_report(&lex))
        }
        Command::Corpus { cmd: CorpusCmd::Sentencize { input, lang, output } } => {
            let raw = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            let id = input.file_stem().and_then(|s| s.to_str()).unwrap_or("book");
            let book = sentencize(id, &raw, *lang);
            write_or_print(output.as_deref(), &book.to_segmented())
        }
        Command::Notes { cmd: NotesCmd::Filter } => stages(&mut open_run(cli, |_| {})?, &[Stage::Filter]),
        Command::Notes { cmd: NotesCmd::Cluster { distance } } => {
            let mut run = open_run(cli, |c| {
                if let Some(d) = distance {
                    c.cluster_distance = *d;
                }
            })?;
            stages(&mut run, &[Stage::Cluster])
        }
        Command::Build { cmd } => build(cli, cmd),
        Command::Align { src_emb: Some(src), tgt_emb: Some(tgt), null_penalty, context, output } => {
            let defaults = PipelineConfig::default();
            let map = pipeline::align_tables(
                &EmbeddingTable::<f32>::load(src).with_context(|| format!("loading {}", src.display()))?,
                &EmbeddingTable::<f32>::load(tgt).with_context(|| format!("loading {}", tgt.display()))?,
                context.unwrap_or(defaults.align_context),
                null_penalty.unwrap_or(defaults.null_penalty),
            )?;
            write_or_print(output.as_deref(), &map.to_tsv())
        }
        Command::Align { null_penalty, context, .. } => {
            let mut run = open_run(cli, |c| {
                if let Some(p) = null_penalty {
                    c.null_penalty = *p;
                }
                if let Some(n) = context {
                    c.align_context = *n;
                }
            })?;
            stages(&mut run, &[Stage::Align, Stage::Project])
        }
        Command::Scorer { cmd } => scorer(cli, cmd),
        Command::Eval { cmd } => eval(cli, cmd),
        Command::Annotate { cmd } => annotate(cli, cmd),
        Command::Pipeline { cmd: PipelineCmd::All } => stages(&mut open_run(cli, |_| {})?, &ALL),
        Command::Pipeline { cmd: PipelineCmd::Stage { name } } => stages(&mut open_run(cli, |_| {})?, &[*name]),
        Command::Pipeline { cmd: PipelineCmd::Rerun { manifest } } => {
            let m = Manifest::load(manifest)?;
            let changed = m.changed_inputs();
            if !changed.is_empty() {
                bail!("inputs changed since the manifest was written: {}", changed.join(", "));
            }
            let mut run = Run::new(m.config.clone(), &m.base_dir, &cli.out)?;
            stages(&mut run, &ALL)
        }
        Command::Demo { cmd: DemoCmd::Generate { dir, demo_seed } } => {
            let d = demo::generate(*demo_seed)?;
            d.write(dir)?;
            println!("wrote {} files to {}", d.files.len(), dir.display());
            Ok(())
        }
    }
}

fn build(cli: &Cli, cmd: &BuildCmd) -> Result<()> {
    match cmd {
        BuildCmd::Instances { exclude_cluster_traits } => {
            let mut run = open_run(cli, |c| c.exclude_cluster_traits |= *exclude_cluster_traits)?;
            stages(&mut run, &[Stage::Annotate, Stage::Build])
        }
        BuildCmd::Unsup { w } => {
            let mut run = open_run(cli, |c| {
                if let Some(w) = w {
                    c.unsup_w = *w;
                }
            })?;
            let lex = run.lexicon()?;
            let books = run.books(Language::Zh)?;
            let pairs = pipeline::build_unsup_pairs(&books, &lex, run.cfg.unsup_w);
            for p in &pairs {
                println!("{}", serde_json::to_string(p)?);
            }
            Ok(())
        }
        BuildCmd::MergeWeak { threshold } => {
            let mut run = open_run(cli, |c| {
                if let Some(t) = threshold {
                    c.weak_threshold = *t;
                }
            })?;
            stages(&mut run, &[Stage::Build])?;
            let report = std::fs::read_to_string(run.out.join("build/report.json"))?;
            let v: serde_json::Value = serde_json::from_str(&report)?;
            print_json(&v["weak"])
        }
        BuildCmd::Validate { dataset, books, lang } => {
            let path = dataset.clone().unwrap_or_else(|| cli.out.join("build/dataset.jsonl"));
            let (n, violations) = pipeline::validate_file(&path, books.as_deref().map(|b| (b, *lang)))?;
            for v in &violations {
                println!("{}\t{}", v.instance_id, v.problem);
            }
            if violations.is_empty() {
                println!("{n} instances, no violations");
                Ok(())
            } else {
                bail!("{} violations in {n} instances", violations.len())
            }
        }
    }
}

fn scorer(cli: &Cli, cmd: &ScorerCmd) -> Result<()> {
    match cmd {
        ScorerCmd::Train { mode } => {
            let mut run = open_run(cli, |c| c.train.modes = vec![*mode])?;
            stages(&mut run, &[Stage::Train])
        }
        ScorerCmd::Predict { mode, split } => {
            let mut run = open_run(cli, |_| {})?;
            println!("instance_id\tpredicted\tpredicted_trait\tgold");
            for (inst, p) in pipeline::predict_split(&mut run, *mode, *split)? {
                println!("{}\t{p}\t{}\t{}", inst.instance_id, inst.candidates[p], inst.gold);
            }
            Ok(())
        }
        ScorerCmd::Gradcheck { mode, n, eps } => {
            let mut run = open_run(cli, |_| {})?;
            let report = pipeline::gradcheck(&mut run, *mode, *n, *eps)?;
            println!(
                "mode={mode} params={} max_rel_error={:.3e} worst_index={} floor={GRAD_CHECK_FLOOR}",
                report.analytic.len(),
                report.max_rel_error,
                report.worst_index
            );
            if report.max_rel_error >= 1e-4 {
                bail!("gradient check failed: {:.3e} >= 1e-4", report.max_rel_error);
            }
            Ok(())
        }
        ScorerCmd::Layout { mode, instance } => {
            let mut run = open_run(cli, |_| {})?;
            let layout = pipeline::layout_preview(&mut run, *mode, instance)?;
            for w in &layout.warnings {
                eprintln!("warning: {w}");
            }
            for (t, h) in layout.tokens.iter().zip(&layout.history_mask) {
                println!("{}\t{t}", if *h { "H" } else { "-" });
            }
            Ok(())
        }
    }
}

fn eval(cli: &Cli, cmd: &EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Run => stages(&mut open_run(cli, |_| {})?, &[Stage::Eval]),
        EvalCmd::Baseline { name, split } => {
            let mut run = open_run(cli, |_| {})?;
            let r = pipeline::eval_baseline(&mut run, *name, *split)?;
            print_json(&serde_json::json!({ "baseline": name, "split": split.to_string(), "n": r.n, "accuracy": r.accuracy }))
        }
        EvalCmd::Kappa { pairs, matrix } => {
            let labels: Vec<(String, String)> = match (pairs, matrix) {
                (Some(p), _) => std::fs::read_to_string(p)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        l.split_once('\t')
                            .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                            .ok_or_else(|| anyhow!("expected two tab-separated labels: {l:?}"))
                    })
                    .collect::<Result<_>>()?,
                (None, Some(m)) => {
                    let cells: Vec<usize> = m.split(',').map(|c| c.trim().parse()).collect::<Result<_, _>>()?;
                    let [a, b, c, d] = cells[..] else { bail!("matrix needs four counts a,b,c,d") };
                    let mut v = Vec::new();
                    for (n, x, y) in [(a, "yes", "yes"), (b, "yes", "no"), (c, "no", "yes"), (d, "no", "no")] {
                        v.extend(std::iter::repeat_n((x.to_string(), y.to_string()), n));
                    }
                    v
                }
                (None, None) => bail!("give --pairs or --matrix"),
            };
            print_json(&cohen_kappa::<f64, _>(&labels)?)
        }
        EvalCmd::Curve | EvalCmd::Timeline => {
            let mut run = open_run(cli, |_| {})?;
            let rel = if matches!(cmd, EvalCmd::Curve) { "eval/curve.csv" } else { "eval/timeline.csv" };
            if !run.out.join(rel).exists() {
                stages(&mut run, &[Stage::Eval])?;
            }
            print!("{}", std::fs::read_to_string(run.out.join(rel))?);
            Ok(())
        }
    }
}

fn annotate(cli: &Cli, cmd: &AnnotateCmd) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cmd {
        AnnotateCmd::Serve { bind, dup_rate, store } => {
            let store = match store {
                Some(p) => open_store(p, *dup_rate, seed)?,
                None => Store::in_memory(*dup_rate, seed),
            };
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("serving on http://{bind}");
            rt.block_on(forge_annotate::serve(*bind, Arc::new(Mutex::new(store))))?;
            Ok(())
        }
        AnnotateCmd::Import { tasks, store } => {
            let text = std::fs::read_to_string(tasks)?;
            let parsed: Vec<AnnotationTask> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .context("parsing tasks")?;
            let n = open_store(store, 0.0, seed)?.import(parsed)?;
            println!("imported {n} tasks");
            Ok(())
        }
        AnnotateCmd::Export { store } => print_json(&open_store(store, 0.0, seed)?.export()),
        AnnotateCmd::Agreement { store } => print_json(&open_store(store, 0.0, seed)?.agreement()?),
    }
}
