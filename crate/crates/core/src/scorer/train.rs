//! Cross-entropy over the candidate set, analytic gradients and a seeded
//! mini-batch SGD loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pool, score_trace, trait_vectors, EncodedInput, Mode, ScorerError, ScorerParams};
use crate::scalar::{dot, Matrix, Real};
use crate::seed::derive_seed;

/// One encoded training or evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub id: String,
    pub input: EncodedInput<T>,
    pub candidates: Vec<Matrix<T>>,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub attn_w: Vec<T>,
    pub attn_b: T,
    pub gate_w: Vec<T>,
    pub gate_b: T,
}

impl<T: Real> Gradient<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { attn_w: vec![T::zero(); dim], attn_b: T::zero(), gate_w: vec![T::zero(); dim], gate_b: T::zero() }
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut v = self.attn_w.clone();
        v.push(self.attn_b);
        v.extend_from_slice(&self.gate_w);
        v.push(self.gate_b);
        v
    }

    fn add_scaled(&mut self, other: &Gradient<T>, scale: T) {
        for (a, &b) in self.attn_w.iter_mut().zip(&other.attn_w) {
            *a = *a + b * scale;
        }
        for (a, &b) in self.gate_w.iter_mut().zip(&other.gate_w) {
            *a = *a + b * scale;
        }
        self.attn_b = self.attn_b + other.attn_b * scale;
        self.gate_b = self.gate_b + other.gate_b * scale;
    }
}

fn log_softmax_at<T: Real>(z: &[T], k: usize) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    z[k] - lse
}

/// Loss of a single example, without gradients.
pub fn example_loss<T: Real>(example: &Example<T>, params: &ScorerParams<T>) -> Result<T, ScorerError> {
    check_gold(example)?;
    let traits = trait_vectors(&example.candidates, params.dim())?;
    let trace = pool(&example.input, params)?;
    let z = score_trace(&trace, &traits, params.mode);
    Ok(-log_softmax_at(&z, example.gold))
}

fn check_gold<T>(example: &Example<T>) -> Result<(), ScorerError> {
    if example.gold >= example.candidates.len() {
        return Err(ScorerError::BadGold { gold: example.gold, candidates: example.candidates.len() });
    }
    Ok(())
}

/// Cross-entropy loss of one example and its exact gradient.
pub fn loss_and_grad<T: Real>(example: &Example<T>, params: &ScorerParams<T>) -> Result<(T, Gradient<T>), ScorerError> {
    check_gold(example)?;
    let d = params.dim();
    let traits = trait_vectors(&example.candidates, d)?;
    let trace = pool(&example.input, params)?;
    let z = score_trace(&trace, &traits, params.mode);
    let loss = -log_softmax_at(&z, example.gold);

    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = e.iter().copied().sum();
    // dL/dz_k = p_k - [k == gold]
    let delta: Vec<T> = e.iter().enumerate().map(|(k, &v)| v / total - if k == example.gold { T::one() } else { T::zero() }).collect();
    let mut u = vec![T::zero(); d];
    for (t, &dk) in traits.iter().zip(&delta) {
        for (ui, &ti) in u.iter_mut().zip(t) {
            *ui = *ui + dk * ti;
        }
    }

    let x = &example.input.x;
    let mask = &example.input.history_mask;
    let mut grad = Gradient::zeros(d);
    let mut d_logits = vec![T::zero(); x.rows()];

    if params.mode == Mode::NoHistory {
        let ux = dot(&u, &trace.x);
        for (j, row) in x.iter_rows().enumerate() {
            d_logits[j] = trace.alpha[j] * (dot(&u, row) - ux);
        }
    } else if trace.history_empty {
        let us = dot(&u, &trace.s);
        for (j, row) in x.iter_rows().enumerate() {
            d_logits[j] = trace.alpha_s[j] * (dot(&u, row) - us);
        }
    } else {
        let g = trace.gate;
        let d_gate = dot(&u, &trace.s) - dot(&u, &trace.h);
        let d_pre = d_gate * g * (T::one() - g);
        let v_s: Vec<T> = u.iter().zip(&params.gate_w).map(|(&ui, &wi)| g * ui + d_pre * wi).collect();
        let v_h: Vec<T> = u.iter().map(|&ui| (T::one() - g) * ui).collect();
        let vs_s = dot(&v_s, &trace.s);
        let vh_h = dot(&v_h, &trace.h);
        for (j, row) in x.iter_rows().enumerate() {
            d_logits[j] = if mask[j] {
                trace.alpha_h[j] * (dot(&v_h, row) - vh_h)
            } else {
                trace.alpha_s[j] * (dot(&v_s, row) - vs_s)
            };
        }
        grad.gate_w = trace.s.iter().map(|&si| d_pre * si).collect();
        grad.gate_b = d_pre;
    }

    for (row, &dl) in x.iter_rows().zip(&d_logits) {
        for (gw, &xi) in grad.attn_w.iter_mut().zip(row) {
            *gw = *gw + dl * xi;
        }
        grad.attn_b = grad.attn_b + dl;
    }
    Ok((loss, grad))
}

fn mean_loss_and_grad<T: Real>(examples: &[&Example<T>], params: &ScorerParams<T>) -> Result<(T, Gradient<T>), ScorerError> {
    let mut grad = Gradient::zeros(params.dim());
    let mut loss = T::zero();
    let scale = T::one() / T::lit(examples.len().max(1) as f64);
    for ex in examples {
        let (l, g) = loss_and_grad(ex, params)?;
        loss = loss + l * scale;
        grad.add_scaled(&g, scale);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Below this magnitude gradients are compared absolutely. Some entries are
/// exactly zero (the attention bias cancels in the softmax) and central
/// differences only reproduce those up to rounding noise of about
/// `1e-16 / eps`.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Relative error `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR)
}

/// Central finite differences of the mean loss against the analytic gradient.
pub fn grad_check(params: &ScorerParams<f64>, examples: &[Example<f64>], eps: f64) -> Result<GradCheckReport, ScorerError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ScorerError::BadEpsilon(eps));
    }
    let refs: Vec<&Example<f64>> = examples.iter().collect();
    let (_, grad) = mean_loss_and_grad(&refs, params)?;
    let analytic = grad.to_flat();
    let base = params.to_flat();
    let mean_loss = |flat: &[f64]| -> Result<f64, ScorerError> {
        let p = ScorerParams::from_flat(flat, params.mode);
        let mut total = 0.0;
        for ex in examples {
            total += example_loss(ex, &p)?;
        }
        Ok(total / examples.len().max(1) as f64)
    };
    let mut numeric = Vec::with_capacity(base.len());
    let mut flat = base.clone();
    for i in 0..base.len() {
        flat[i] = base[i] + eps;
        let up = mean_loss(&flat)?;
        flat[i] = base[i] - eps;
        let down = mean_loss(&flat)?;
        flat[i] = base[i];
        numeric.push((up - down) / (2.0 * eps));
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport { analytic, numeric, max_rel_error, worst_index })
}

pub fn predict<T: Real>(examples: &[Example<T>], params: &ScorerParams<T>) -> Result<Vec<usize>, ScorerError> {
    examples
        .iter()
        .map(|ex| super::score_instance(&ex.input, &ex.candidates, params).map(|s| s.argmax))
        .collect()
}

pub fn accuracy<T: Real>(examples: &[Example<T>], params: &ScorerParams<T>) -> Result<f64, ScorerError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let preds = predict(examples, params)?;
    let hits = preds.iter().zip(examples).filter(|(p, ex)| **p == ex.gold).count();
    Ok(100.0 * hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 0.5, batch_size: 8, seed: 0, patience: Some(5) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the best dev epoch, or the last epoch without dev data.
    pub params: ScorerParams<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

fn dump_state<T: Real>(params: &ScorerParams<T>, batch: &[&Example<T>]) -> String {
    let params: Vec<String> = params.to_flat().iter().map(|v| format!("{v}")).collect();
    let inputs: Vec<String> = batch
        .iter()
        .map(|ex| format!("{}: tokens={} finite={}", ex.id, ex.input.x.rows(), ex.input.x.is_finite()))
        .collect();
    format!("params=[{}]\n{}", params.join(", "), inputs.join("\n"))
}

pub fn train_scorer<T: Real>(
    train: &[Example<T>],
    dev: &[Example<T>],
    init: ScorerParams<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, ScorerError> {
    let mut params = init;
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let lr = T::lit(config.learning_rate);
    let batch_size = config.batch_size.max(1);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("epoch/{epoch}")));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = mean_loss_and_grad(&batch, &params)?;
            let step_ok = loss.is_finite() && grad.to_flat().iter().all(|g| g.is_finite());
            if !step_ok {
                return Err(ScorerError::NonFiniteLoss {
                    epoch,
                    batch: batch.iter().map(|ex| ex.id.clone()).collect(),
                    dump: dump_state(&params, &batch),
                });
            }
            epoch_loss += loss.to_f64_lossy() * batch.len() as f64;
            for (w, &g) in params.attn_w.iter_mut().zip(&grad.attn_w) {
                *w = *w - lr * g;
            }
            for (w, &g) in params.gate_w.iter_mut().zip(&grad.gate_w) {
                *w = *w - lr * g;
            }
            params.attn_b = params.attn_b - lr * grad.attn_b;
            params.gate_b = params.gate_b - lr * grad.gate_b;
        }
        let train_loss = if train.is_empty() { 0.0 } else { epoch_loss / train.len() as f64 };
        let dev_accuracy = if dev.is_empty() { None } else { Some(accuracy(dev, &params)?) };
        history.push(EpochStats { epoch, train_loss, dev_accuracy });
        match dev_accuracy {
            Some(acc) if acc > best_acc => {
                best_acc = acc;
                best = params.clone();
                best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if config.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
            None => {
                best = params.clone();
                best_epoch = epoch;
            }
        }
    }
    Ok(TrainOutcome { params: best, best_epoch, history })
}
