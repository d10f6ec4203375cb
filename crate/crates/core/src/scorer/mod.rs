//! Siamese scoring head over externally encoded token embeddings.
//!
//! A linear scorer assigns every input token an attention logit. Tokens are
//! pooled into a snippet vector `s` (non-history positions) and a history
//! vector `h` (history positions); a scalar gate computed from `s` blends
//! the two dot products with a candidate trait vector. Without history the
//! head reduces to one attention-pooled vector `x`.

mod checkpoint;
mod layout;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{dot, logistic, Matrix, Real};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layout::{encode_layout, encode_traits, layout_input, Budget, CharacterHistory, Layout, LayoutContext, TokenEncoder, SEP};
pub use train::{
    accuracy, example_loss, grad_check, GRAD_CHECK_FLOOR, loss_and_grad, predict, relative_error, train_scorer, EpochStats, Example, GradCheckReport,
    Gradient, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "no-hist")]
    NoHistory,
    #[serde(rename = "ext-hist")]
    ExtendedHistory,
    #[serde(rename = "char-hist")]
    CharacterHistory,
    #[serde(rename = "hist-traits")]
    HistoryTraits,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::NoHistory, Mode::ExtendedHistory, Mode::CharacterHistory, Mode::HistoryTraits];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoHistory => "no-hist",
            Mode::ExtendedHistory => "ext-hist",
            Mode::CharacterHistory => "char-hist",
            Mode::HistoryTraits => "hist-traits",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Mode::NoHistory => 0,
            Mode::ExtendedHistory => 1,
            Mode::CharacterHistory => 2,
            Mode::HistoryTraits => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn uses_history(self) -> bool {
        self != Mode::NoHistory
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected no-hist, ext-hist, char-hist or hist-traits)"))
    }
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("history mask has {mask} entries for {tokens} tokens")]
    MaskLength { mask: usize, tokens: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no candidates to score")]
    NoCandidates,
    #[error("gold index {gold} out of range for {candidates} candidates")]
    BadGold { gold: usize, candidates: usize },
    #[error("finite-difference step must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("non-finite loss at epoch {epoch}, batch {batch:?}\n{dump}")]
    NonFiniteLoss { epoch: usize, batch: Vec<String>, dump: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams<T> {
    pub attn_w: Vec<T>,
    pub attn_b: T,
    pub gate_w: Vec<T>,
    pub gate_b: T,
    pub mode: Mode,
}

impl<T: Real> ScorerParams<T> {
    /// Uniform attention and an even gate.
    pub fn zeros(dim: usize, mode: Mode) -> Self {
        Self { attn_w: vec![T::zero(); dim], attn_b: T::zero(), gate_w: vec![T::zero(); dim], gate_b: T::zero(), mode }
    }

    pub fn dim(&self) -> usize {
        self.attn_w.len()
    }

    pub fn len_flat(&self) -> usize {
        2 * self.dim() + 2
    }

    /// `[attn_w, attn_b, gate_w, gate_b]`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.attn_w.clone();
        v.push(self.attn_b);
        v.extend_from_slice(&self.gate_w);
        v.push(self.gate_b);
        v
    }

    pub fn from_flat(flat: &[T], mode: Mode) -> Self {
        let d = (flat.len() - 2) / 2;
        Self {
            attn_w: flat[..d].to_vec(),
            attn_b: flat[d],
            gate_w: flat[d + 1..2 * d + 1].to_vec(),
            gate_b: flat[2 * d + 1],
            mode,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Token embeddings of a laid-out input and which positions are history.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput<T> {
    pub x: Matrix<T>,
    pub history_mask: Vec<bool>,
}

impl<T: Real> EncodedInput<T> {
    pub fn new(x: Matrix<T>, history_mask: Vec<bool>) -> Self {
        Self { x, history_mask }
    }

    pub fn without_history(x: Matrix<T>) -> Self {
        let n = x.rows();
        Self { x, history_mask: vec![false; n] }
    }

    pub fn has_history(&self) -> bool {
        self.history_mask.iter().any(|&m| m)
    }
}

/// Every intermediate of one pooling pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingTrace<T> {
    pub logits: Vec<T>,
    pub alpha: Vec<T>,
    pub alpha_s: Vec<T>,
    pub alpha_h: Vec<T>,
    pub s: Vec<T>,
    pub h: Vec<T>,
    pub x: Vec<T>,
    /// Logistic gate value computed from `s`.
    pub gate: T,
    pub history_empty: bool,
}

impl<T: Real> PoolingTrace<T> {
    /// Gate used for scoring: forced to 1 when there is no history.
    pub fn effective_gate(&self) -> T {
        if self.history_empty {
            T::one()
        } else {
            self.gate
        }
    }
}

/// Softmax restricted to positions where `keep` holds; zero elsewhere and an
/// all-zero vector for an empty support.
pub(crate) fn masked_softmax<T: Real>(logits: &[T], keep: impl Fn(usize) -> bool) -> Vec<T> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, &a)| a)
        .fold(T::neg_infinity(), T::max);
    let mut out = vec![T::zero(); logits.len()];
    if max == T::neg_infinity() {
        return out;
    }
    let mut total = T::zero();
    for (j, &a) in logits.iter().enumerate() {
        if keep(j) {
            out[j] = (a - max).exp();
            total = total + out[j];
        }
    }
    out.iter_mut().for_each(|v| *v = *v / total);
    out
}

fn check_input<T: Real>(input: &EncodedInput<T>, dim: usize) -> Result<(), ScorerError> {
    if input.x.rows() == 0 {
        return Err(ScorerError::EmptyInput);
    }
    if input.x.cols() != dim {
        return Err(ScorerError::Dimension { expected: dim, found: input.x.cols() });
    }
    if input.history_mask.len() != input.x.rows() {
        return Err(ScorerError::MaskLength { mask: input.history_mask.len(), tokens: input.x.rows() });
    }
    if !input.x.is_finite() {
        return Err(ScorerError::NonFinite("token embeddings"));
    }
    Ok(())
}

pub fn pool<T: Real>(input: &EncodedInput<T>, params: &ScorerParams<T>) -> Result<PoolingTrace<T>, ScorerError> {
    check_input(input, params.dim())?;
    if !params.is_finite() {
        return Err(ScorerError::NonFinite("parameters"));
    }
    let mask = &input.history_mask;
    let logits: Vec<T> = input.x.iter_rows().map(|row| dot(&params.attn_w, row) + params.attn_b).collect();
    let alpha = masked_softmax(&logits, |_| true);
    let alpha_s = masked_softmax(&logits, |j| !mask[j]);
    let alpha_h = masked_softmax(&logits, |j| mask[j]);
    let s = input.x.weighted_rows(&alpha_s);
    let h = input.x.weighted_rows(&alpha_h);
    let x = input.x.weighted_rows(&alpha);
    let gate = logistic(dot(&params.gate_w, &s) + params.gate_b);
    Ok(PoolingTrace { logits, alpha, alpha_s, alpha_h, s, h, x, gate, history_empty: !input.has_history() })
}

/// Candidate scores and the winning index (lowest index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct Scores<T> {
    pub scores: Vec<T>,
    pub argmax: usize,
}

pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores from an existing trace and averaged trait vectors.
pub fn score_trace<T: Real>(trace: &PoolingTrace<T>, traits: &[Vec<T>], mode: Mode) -> Vec<T> {
    let g = trace.effective_gate();
    traits
        .iter()
        .map(|t| match mode {
            Mode::NoHistory => dot(&trace.x, t),
            _ => g * dot(&trace.s, t) + (T::one() - g) * dot(&trace.h, t),
        })
        .collect()
}

pub fn trait_vectors<T: Real>(candidates: &[Matrix<T>], dim: usize) -> Result<Vec<Vec<T>>, ScorerError> {
    if candidates.is_empty() {
        return Err(ScorerError::NoCandidates);
    }
    candidates
        .iter()
        .map(|c| {
            if c.cols() != dim {
                Err(ScorerError::Dimension { expected: dim, found: c.cols() })
            } else if c.rows() == 0 {
                Err(ScorerError::EmptyInput)
            } else if !c.is_finite() {
                Err(ScorerError::NonFinite("trait embeddings"))
            } else {
                Ok(c.mean_row())
            }
        })
        .collect()
}

pub fn score_instance<T: Real>(
    input: &EncodedInput<T>,
    candidates: &[Matrix<T>],
    params: &ScorerParams<T>,
) -> Result<Scores<T>, ScorerError> {
    let traits = trait_vectors(candidates, params.dim())?;
    let trace = pool(input, params)?;
    let scores = score_trace(&trace, &traits, params.mode);
    let argmax = argmax(&scores);
    Ok(Scores { scores, argmax })
}
