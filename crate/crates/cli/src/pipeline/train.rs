//! Scorer training and the evaluation stage.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use anyhow::{anyhow, bail, Context, Result};
use forge_core::corpus::{BookText, Language};
use forge_core::dataset::{Instance, Split};
use forge_core::embedding::PseudoEmbedder;
use forge_core::eval::{
    curve_csv, evaluate, learning_curve, run_baseline, sentiment_timeline, timeline_csv, timeline_svg, Baseline,
    EvalError, EvalReport,
};
use forge_core::lexicon::Lexicon;
use forge_core::scalar::Matrix;
use forge_core::scorer::{
    encode_layout, encode_traits, grad_check, layout_input, predict, read_checkpoint, train_scorer, write_checkpoint,
    Budget, CharacterHistory, Example, GradCheckReport, Layout, LayoutContext, Mode, ScorerError, ScorerParams,
    TokenEncoder, TrainConfig, TrainOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{Outcome, Run, Stage};

/// Pseudo encoder with a per-token cache; the vocabulary of a run is small.
pub struct CachedEmbedder {
    inner: PseudoEmbedder,
    scale: f64,
    cache: RefCell<HashMap<String, Vec<f64>>>,
}

impl CachedEmbedder {
    pub fn new(dim: usize, seed: u64, scale: f64) -> Self {
        Self { inner: PseudoEmbedder::new(dim, seed), scale, cache: RefCell::new(HashMap::new()) }
    }
}

impl TokenEncoder<f64> for CachedEmbedder {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, _ordinal: u32, tokens: &[String]) -> Result<Matrix<f64>, ScorerError> {
        let d = self.inner.dim();
        let mut cache = self.cache.borrow_mut();
        let mut m = Matrix::zeros(tokens.len(), d);
        for (i, t) in tokens.iter().enumerate() {
            let v = cache.entry(t.clone()).or_insert_with(|| {
                let v: Vec<f64> = self.inner.embed_token(t);
                v.into_iter().map(|x| x * self.scale).collect()
            });
            m.row_mut(i).copy_from_slice(v);
        }
        Ok(m)
    }
}

/// Everything the scorer needs besides the instances themselves.
struct Inputs {
    lexicon: Lexicon,
    books: BTreeMap<String, BookText>,
    instances: Vec<Instance>,
    history: CharacterHistory,
    budget: Budget,
    encoder: CachedEmbedder,
}

impl Inputs {
    fn load(run: &mut Run) -> Result<Self> {
        let lexicon = run.lexicon()?;
        let books = run.books(Language::Zh)?;
        let instances = run.dataset()?;
        let history = CharacterHistory::build(&instances);
        let budget = Budget { snippet: run.cfg.budgets.no_hist, total: run.cfg.budgets.hist_total };
        let encoder = CachedEmbedder::new(run.cfg.train.dim, run.seed("encoder"), run.cfg.train.embed_scale);
        Ok(Self { lexicon, books, instances, history, budget, encoder })
    }

    fn ctx(&self) -> LayoutContext<'_> {
        LayoutContext { books: &self.books, lexicon: &self.lexicon, history: &self.history, budget: self.budget }
    }

    fn split(&self, split: Split) -> Vec<&Instance> {
        self.instances.iter().filter(|i| i.split == split).collect()
    }

    fn examples(&self, instances: &[&Instance], mode: Mode) -> Result<Vec<Example<f64>>> {
        let ctx = self.ctx();
        instances
            .iter()
            .enumerate()
            .map(|(k, inst)| {
                let layout = layout_input(inst, mode, &ctx)?;
                let input = encode_layout(&layout, k as u32, &self.encoder)?;
                let candidates = encode_traits(&inst.candidates, &self.lexicon, inst.language, &self.encoder)?;
                let gold = inst.gold_index().ok_or_else(|| anyhow!("instance {} has no gold candidate", inst.instance_id))?;
                Ok(Example { id: inst.instance_id.clone(), input, candidates, gold })
            })
            .collect()
    }
}

fn train_config(run: &Run, mode: Mode) -> TrainConfig {
    TrainConfig {
        epochs: run.cfg.train.epochs,
        learning_rate: run.cfg.train.learning_rate,
        batch_size: run.cfg.train.batch_size,
        seed: run.seed(&format!("train/{mode}")),
        patience: run.cfg.train.patience,
    }
}

fn checkpoint_path(mode: Mode) -> String {
    format!("train/{mode}.pnscr")
}

pub(super) fn run(run: &mut Run) -> Result<Outcome> {
    let inputs = Inputs::load(run)?;
    let train = inputs.split(Split::Train);
    let dev = inputs.split(Split::Dev);
    if train.is_empty() {
        bail!("no training instances");
    }
    for mode in run.cfg.train.modes.clone() {
        let train_ex = inputs.examples(&train, mode)?;
        let dev_ex = inputs.examples(&dev, mode)?;
        let init = ScorerParams::zeros(inputs.encoder.dim(), mode);
        let outcome: TrainOutcome<f64> = train_scorer(&train_ex, &dev_ex, init, &train_config(run, mode))?;
        let mut bytes = Vec::new();
        write_checkpoint(&outcome.params, &mut bytes)?;
        run.write(&checkpoint_path(mode), bytes)?;
        run.write_json(
            &format!("train/{mode}.json"),
            &json!({
                "mode": mode,
                "train": train_ex.len(),
                "dev": dev_ex.len(),
                "best_epoch": outcome.best_epoch,
                "history": outcome.history,
            }),
        )?;
    }
    Ok(Outcome::Done)
}

fn load_params(run: &Run, mode: Mode) -> Result<ScorerParams<f64>> {
    let path = run.out.join(checkpoint_path(mode));
    let bytes = std::fs::read(&path).with_context(|| format!("reading {} (run the {} stage first)", path.display(), Stage::Train))?;
    let params: ScorerParams<f64> = read_checkpoint(bytes.as_slice())?;
    if params.mode != mode {
        bail!("checkpoint {} holds mode {}, expected {mode}", path.display(), params.mode);
    }
    Ok(params)
}

/// Predicted candidate index per instance of one split.
pub fn predict_split(run: &mut Run, mode: Mode, split: Split) -> Result<Vec<(Instance, usize)>> {
    let params = load_params(run, mode)?;
    let inputs = Inputs::load(run)?;
    let items = inputs.split(split);
    let ex = inputs.examples(&items, mode)?;
    let preds = predict(&ex, &params)?;
    Ok(items.into_iter().cloned().zip(preds).collect())
}

/// Analytic against numeric gradient on the first `n` training instances,
/// at seeded random parameters.
pub fn gradcheck(run: &mut Run, mode: Mode, n: usize, eps: f64) -> Result<GradCheckReport> {
    let inputs = Inputs::load(run)?;
    let train: Vec<&Instance> = inputs.split(Split::Train).into_iter().take(n.max(1)).collect();
    let ex = inputs.examples(&train, mode)?;
    let d = inputs.encoder.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed(&format!("gradcheck/{mode}")));
    let flat: Vec<f64> = (0..2 * d + 2).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Ok(grad_check(&ScorerParams::from_flat(&flat, mode), &ex, eps)?)
}

pub fn layout_preview(run: &mut Run, mode: Mode, instance_id: &str) -> Result<Layout> {
    let inputs = Inputs::load(run)?;
    let inst = inputs
        .instances
        .iter()
        .find(|i| i.instance_id == instance_id)
        .ok_or_else(|| anyhow!("no instance {instance_id}"))?;
    Ok(layout_input(inst, mode, &inputs.ctx())?)
}

pub fn eval_baseline(run: &mut Run, baseline: Baseline, split: Split) -> Result<EvalReport> {
    let inputs = Inputs::load(run)?;
    let items: Vec<Instance> = inputs.split(split).into_iter().cloned().collect();
    let train: Vec<Instance> = inputs.split(Split::Train).into_iter().cloned().collect();
    let preds = run_baseline(baseline, &items, &train, &inputs.instances, run.seed("baseline"));
    Ok(evaluate(&items, &preds)?)
}

fn difficulty_tsv(report: &EvalReport, lex: &Lexicon) -> String {
    let mut out = String::from("trait_id\tlemma\tn\taccuracy\n");
    for g in report.difficulty() {
        let lemma = lex.get(g.key).map(|e| e.english_lemma.as_str()).unwrap_or("");
        out.push_str(&format!("{}\t{lemma}\t{}\t{:.2}\n", g.key, g.n, g.accuracy));
    }
    out
}

pub(super) fn eval(run: &mut Run) -> Result<Outcome> {
    let inputs = Inputs::load(run)?;
    let test: Vec<Instance> = inputs.split(Split::Test).into_iter().cloned().collect();
    let train: Vec<Instance> = inputs.split(Split::Train).into_iter().cloned().collect();
    if test.is_empty() {
        bail!("no test instances");
    }
    let mut systems: Vec<(String, EvalReport)> = Vec::new();
    for b in [Baseline::Random, Baseline::FrequentTraits, Baseline::CharMajority] {
        let preds = run_baseline(b, &test, &train, &inputs.instances, run.seed("baseline"));
        let name = serde_json::to_value(b)?.as_str().unwrap_or("baseline").to_string();
        systems.push((name, evaluate(&test, &preds)?));
    }
    let test_refs: Vec<&Instance> = test.iter().collect();
    for mode in run.cfg.train.modes.clone() {
        let params = load_params(run, mode)?;
        let ex = inputs.examples(&test_refs, mode)?;
        systems.push((mode.to_string(), evaluate(&test, &predict(&ex, &params)?)?));
    }
    for (name, report) in &systems {
        run.write(&format!("eval/{name}.per_trait.csv"), report.per_trait_csv(Some(&inputs.lexicon)))?;
        run.write(&format!("eval/{name}.per_book.csv"), report.per_book_csv())?;
        run.write(&format!("eval/{name}.difficulty.tsv"), difficulty_tsv(report, &inputs.lexicon))?;
    }

    let curve_mode = run.cfg.eval.curve_mode;
    let train_refs = inputs.split(Split::Train);
    let curve_train = inputs.examples(&train_refs, curve_mode)?;
    let curve_test = inputs.examples(&test_refs, curve_mode)?;
    let config = train_config(run, curve_mode);
    let fractions = run.cfg.eval.curve_fractions.clone();
    let indices: Vec<usize> = (0..curve_train.len()).collect();
    let curve = learning_curve::<anyhow::Error, _, _>(&indices, &fractions, run.seed("curve"), |prefix| {
        let subset: Vec<Example<f64>> = prefix.iter().map(|&i| curve_train[i].clone()).collect();
        let init = ScorerParams::zeros(inputs.encoder.dim(), curve_mode);
        let out = train_scorer(&subset, &[], init, &config)?;
        Ok(forge_core::scorer::accuracy(&curve_test, &out.params)?)
    })?;
    run.write("eval/curve.csv", curve_csv(&curve))?;

    let timeline = timeline(run, &inputs)?;

    let agreement = std::fs::read_to_string(run.out.join(super::annotate::AGREEMENT))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok());
    let summary: Vec<serde_json::Value> = systems
        .iter()
        .map(|(name, r)| json!({ "system": name, "n": r.n, "correct": r.correct, "accuracy": r.accuracy }))
        .collect();
    run.write_json(
        "eval/summary.json",
        &json!({
            "test_instances": test.len(),
            "systems": summary,
            "curve_mode": curve_mode,
            "curve": curve,
            "timeline": timeline,
            "annotation_agreement": agreement,
        }),
    )?;
    Ok(Outcome::Done)
}

/// Timeline of the character with the most instances (ties by book, name).
fn timeline(run: &mut Run, inputs: &Inputs) -> Result<serde_json::Value> {
    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for i in &inputs.instances {
        *counts.entry((i.book_id(), i.character.canonical.as_str())).or_default() += 1;
    }
    let Some(((book, name), _)) = counts.iter().fold(None, |best: Option<(&(&str, &str), &usize)>, cur| match best {
        Some(b) if b.1 >= cur.1 => Some(b),
        _ => Some(cur),
    }) else {
        return Ok(serde_json::Value::Null);
    };
    let (book, name) = (book.to_string(), name.to_string());
    let items: Vec<&Instance> =
        inputs.instances.iter().filter(|i| i.book_id() == book && i.character.canonical == name).collect();
    let book_len = inputs.books.get(&book).map(|b| b.token_len()).unwrap_or(0);
    let points = sentiment_timeline(&items, book_len, &inputs.lexicon, run.cfg.eval.timeline_window)
        .map_err(|e: EvalError| anyhow!(e))?;
    run.write("eval/timeline.csv", timeline_csv(&points))?;
    run.write("eval/timeline.svg", timeline_svg(&points, &format!("{name} ({book})")))?;
    Ok(json!({ "book": book, "character": name, "instances": items.len(), "points": points.len() }))
}
