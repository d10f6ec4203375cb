//! Accuracy reports, baselines, inter-annotator agreement, learning curves
//! and per-character sentiment timelines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_traits::{FromPrimitive, Num};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::Instance;
use crate::lexicon::{Lexicon, TraitId};
use crate::seed::derive_seed;

/// Traits with more test instances than this are ranked for difficulty.
pub const DIFFICULTY_MIN_COUNT: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions for {instances} instances")]
    LengthMismatch { instances: usize, predictions: usize },
    #[error("prediction {index} out of range for instance {instance_id}")]
    BadPrediction { instance_id: String, index: usize },
    #[error("no paired annotations")]
    NoPairs,
    #[error("chance agreement is 1 but observed agreement is not")]
    DegenerateChance,
    #[error("window must be positive")]
    ZeroWindow,
    #[error("book length must be positive")]
    EmptyBook,
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAccuracy<K> {
    pub key: K,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    /// Percent.
    pub accuracy: f64,
    pub per_trait: Vec<GroupAccuracy<TraitId>>,
    pub per_book: Vec<GroupAccuracy<String>>,
}

fn percent(correct: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * correct as f64 / n as f64
    }
}

fn groups<K: Clone + Ord>(counts: BTreeMap<K, (usize, usize)>) -> Vec<GroupAccuracy<K>> {
    counts
        .into_iter()
        .map(|(key, (n, correct))| GroupAccuracy { key, n, correct, accuracy: percent(correct, n) })
        .collect()
}

/// `predictions[i]` is the chosen candidate index of `instances[i]`.
pub fn evaluate(instances: &[Instance], predictions: &[usize]) -> Result<EvalReport, EvalError> {
    if instances.len() != predictions.len() {
        return Err(EvalError::LengthMismatch { instances: instances.len(), predictions: predictions.len() });
    }
    let mut by_trait: BTreeMap<TraitId, (usize, usize)> = BTreeMap::new();
    let mut by_book: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (inst, &p) in instances.iter().zip(predictions) {
        let chosen = *inst
            .candidates
            .get(p)
            .ok_or_else(|| EvalError::BadPrediction { instance_id: inst.instance_id.clone(), index: p })?;
        let hit = usize::from(chosen == inst.gold);
        correct += hit;
        let t = by_trait.entry(inst.gold).or_default();
        t.0 += 1;
        t.1 += hit;
        let b = by_book.entry(inst.book_id().to_string()).or_default();
        b.0 += 1;
        b.1 += hit;
    }
    Ok(EvalReport {
        n: instances.len(),
        correct,
        accuracy: percent(correct, instances.len()),
        per_trait: groups(by_trait),
        per_book: groups(by_book),
    })
}

impl EvalReport {
    /// Traits seen more than [`DIFFICULTY_MIN_COUNT`] times, hardest first.
    pub fn difficulty(&self) -> Vec<&GroupAccuracy<TraitId>> {
        let mut v: Vec<_> = self.per_trait.iter().filter(|g| g.n > DIFFICULTY_MIN_COUNT).collect();
        v.sort_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(a.key.cmp(&b.key)));
        v
    }

    pub fn per_trait_csv(&self, lexicon: Option<&Lexicon>) -> String {
        let mut out = String::from("trait_id,lemma,n,correct,accuracy,difficult\n");
        for g in &self.per_trait {
            let lemma = lexicon.and_then(|l| l.get(g.key)).map(|e| e.english_lemma.as_str()).unwrap_or("");
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{}",
                g.key.0,
                csv_field(lemma),
                g.n,
                g.correct,
                g.accuracy,
                g.n > DIFFICULTY_MIN_COUNT
            );
        }
        out
    }

    pub fn per_book_csv(&self) -> String {
        let mut out = String::from("book_id,n,correct,accuracy\n");
        for g in &self.per_book {
            let _ = writeln!(out, "{},{},{},{:.4}", csv_field(&g.key), g.n, g.correct, g.accuracy);
        }
        out
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Random,
    FrequentTraits,
    CharMajority,
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Baseline::Random),
            "frequent_traits" | "frequent-traits" => Ok(Baseline::FrequentTraits),
            "char_majority" | "char-majority" => Ok(Baseline::CharMajority),
            other => Err(format!("unknown baseline {other:?}")),
        }
    }
}

/// Candidate with the highest count, lowest trait id on ties.
fn most_counted(candidates: &[TraitId], counts: &BTreeMap<TraitId, u64>) -> Option<usize> {
    let mut best: Option<(usize, u64)> = None;
    for (i, t) in candidates.iter().enumerate() {
        let c = counts.get(t).copied().unwrap_or(0);
        let better = match best {
            None => true,
            Some((j, bc)) => c > bc || (c == bc && *t < candidates[j]),
        };
        if better {
            best = Some((i, c));
        }
    }
    best.map(|(i, _)| i)
}

/// Predictions of a non-learned baseline.
///
/// `train` supplies gold frequencies; `context` supplies the earlier
/// instances consulted by the character-majority rule (usually every
/// instance of the evaluated books).
pub fn run_baseline(
    baseline: Baseline,
    instances: &[Instance],
    train: &[Instance],
    context: &[Instance],
    seed: u64,
) -> Vec<usize> {
    let mut freq: BTreeMap<TraitId, u64> = BTreeMap::new();
    for inst in train {
        *freq.entry(inst.gold).or_default() += 1;
    }
    let mut by_character: BTreeMap<(&str, &str), Vec<(usize, TraitId)>> = BTreeMap::new();
    if baseline == Baseline::CharMajority {
        for inst in context {
            by_character
                .entry((inst.book_id(), inst.character.canonical.as_str()))
                .or_default()
                .push((inst.snippet.center, inst.gold));
        }
    }
    instances
        .iter()
        .map(|inst| match baseline {
            Baseline::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &inst.instance_id));
                rng.gen_range(0..inst.candidates.len().max(1))
            }
            Baseline::FrequentTraits => most_counted(&inst.candidates, &freq).unwrap_or(0),
            Baseline::CharMajority => {
                let mut prior: BTreeMap<TraitId, u64> = BTreeMap::new();
                let key = (inst.book_id(), inst.character.canonical.as_str());
                for &(center, gold) in by_character.get(&key).map(Vec::as_slice).unwrap_or(&[]) {
                    if center < inst.snippet.center && inst.candidates.contains(&gold) {
                        *prior.entry(gold).or_default() += 1;
                    }
                }
                if prior.is_empty() {
                    most_counted(&inst.candidates, &freq).unwrap_or(0)
                } else {
                    most_counted(&inst.candidates, &prior).unwrap_or(0)
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport<T> {
    pub n: usize,
    pub observed: T,
    pub chance: T,
    pub kappa: T,
}

/// Cohen's kappa of paired labels in any numeric type that can represent
/// count ratios (floats or exact rationals).
pub fn cohen_kappa<T, L>(pairs: &[(L, L)]) -> Result<KappaReport<T>, EvalError>
where
    T: Num + FromPrimitive + Clone + PartialEq,
    L: Ord,
{
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let n = pairs.len();
    let mut a: BTreeMap<&L, usize> = BTreeMap::new();
    let mut b: BTreeMap<&L, usize> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in pairs {
        *a.entry(x).or_default() += 1;
        *b.entry(y).or_default() += 1;
        agree += usize::from(x == y);
    }
    let cast = |v: usize| T::from_usize(v).expect("count fits the numeric type");
    let total = cast(n);
    let observed = cast(agree) / total.clone();
    let labels: BTreeSet<&L> = a.keys().chain(b.keys()).copied().collect();
    let mut chance = T::zero();
    for l in labels {
        let pa = cast(a.get(l).copied().unwrap_or(0)) / total.clone();
        let pb = cast(b.get(l).copied().unwrap_or(0)) / total.clone();
        chance = chance + pa * pb;
    }
    let kappa = if chance == T::one() {
        if observed != T::one() {
            return Err(EvalError::DegenerateChance);
        }
        T::one()
    } else {
        (observed.clone() - chance.clone()) / (T::one() - chance.clone())
    };
    Ok(KappaReport { n, observed, chance, kappa })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n: usize,
    pub score: f64,
}

/// Prefix size for a training fraction, at least one when `n > 0`.
pub fn prefix_len(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(usize::from(n > 0), n)
}

/// Shuffles once with `seed` and evaluates nested prefixes of the result.
pub fn learning_curve<E, F, X>(train: &[X], fractions: &[f64], seed: u64, mut eval_fn: F) -> Result<Vec<CurvePoint>, E>
where
    X: Clone,
    F: FnMut(&[X]) -> Result<f64, E>,
    E: From<EvalError>,
{
    let mut order: Vec<X> = train.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "learning-curve")));
    let mut out = Vec::new();
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(EvalError::BadFraction(f).into());
        }
        let n = prefix_len(f, order.len());
        let score = eval_fn(&order[..n])?;
        out.push(CurvePoint { fraction: f, n, score });
    }
    Ok(out)
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("fraction,n,score\n");
    for p in points {
        let _ = writeln!(out, "{},{},{:.4}", p.fraction, p.n, p.score);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimelinePoint {
    pub x: f64,
    pub y: f64,
}

/// Moving average of trait polarity over one character's instances, in book
/// order. Only full windows are emitted; a window larger than the number of
/// instances shrinks to cover all of them.
pub fn sentiment_timeline(
    instances: &[&Instance],
    book_len: usize,
    lexicon: &Lexicon,
    window: usize,
) -> Result<Vec<TimelinePoint>, EvalError> {
    if window == 0 {
        return Err(EvalError::ZeroWindow);
    }
    if book_len == 0 {
        return Err(EvalError::EmptyBook);
    }
    let mut ordered: Vec<&&Instance> = instances.iter().collect();
    ordered.sort_by(|a, b| a.snippet.center.cmp(&b.snippet.center).then(a.instance_id.cmp(&b.instance_id)));
    let raw: Vec<(f64, f64)> = ordered
        .iter()
        .map(|i| {
            let sign = lexicon.get(i.gold).map(|e| e.polarity.sign()).unwrap_or(0.0);
            (i.snippet.center as f64 / book_len as f64, sign)
        })
        .collect();
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let w = window.min(raw.len());
    Ok(raw
        .windows(w)
        .map(|win| TimelinePoint {
            x: win.iter().map(|p| p.0).sum::<f64>() / w as f64,
            y: win.iter().map(|p| p.1).sum::<f64>() / w as f64,
        })
        .collect())
}

pub fn timeline_csv(points: &[TimelinePoint]) -> String {
    let mut out = String::from("x,y\n");
    for p in points {
        let _ = writeln!(out, "{:.6},{:.6}", p.x, p.y);
    }
    out
}

/// Line plot with x in `[0, 1]` and y in `[-1, 1]`.
pub fn timeline_svg(points: &[TimelinePoint], title: &str) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let px = |x: f64| pad + x.clamp(0.0, 1.0) * (w - 2.0 * pad);
    let py = |y: f64| pad + (1.0 - y.clamp(-1.0, 1.0)) / 2.0 * (h - 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, xml_escape(title));
    let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray"/>"#, px(0.0), py(0.0), px(1.0), py(0.0));
    let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray"/>"#, px(0.0), py(-1.0), px(0.0), py(1.0));
    let coords: Vec<String> = points.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y))).collect();
    let _ = writeln!(out, r#"<polyline fill="none" stroke="firebrick" stroke-width="2" points="{}"/>"#, coords.join(" "));
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
