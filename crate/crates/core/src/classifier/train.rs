use super::arch::Architecture;
use super::metrics::{
    evaluate_probabilities, report_from_predictions, sweep_threshold, EvalReport, ThresholdSweep,
};
use super::network::{forward_batch, loss_and_grads, Dropout, Input, UNSTABLE};
use super::params::Params;
use crate::dataset::ShedSample;
use crate::error::{Error, Result};
use crate::labeler::Verdict;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Gradients are computed on fixed-size chunks of a batch and summed in
/// chunk order, so results do not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub input: Input<'a>,
    /// 0 = STABLE, 1 = UNSTABLE.
    pub label: usize,
}

pub fn label_index(v: Verdict) -> usize {
    match v {
        Verdict::Stable => 0,
        Verdict::Unstable => 1,
    }
}

pub fn examples(samples: &[ShedSample]) -> Vec<Example<'_>> {
    samples
        .iter()
        .map(|s| Example {
            input: Input {
                x: &s.x,
                load_index: s.load_index,
            },
            label: label_index(s.label),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a better validation macro-F1 before stopping.
    pub patience: usize,
    pub seed: u64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 60,
            patience: 12,
            seed: 0,
            dropout: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::config(
                "batch_size, patience and max_epochs must be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "learning_rate must be positive and dropout in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1.
    pub params: Params,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Mean loss and summed-in-order gradient of a batch.
fn batch_gradient(
    p: &Params,
    batch: &[Example],
    dropout: Option<(f64, u64)>,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let inputs: Vec<Input> = chunk.iter().map(|e| e.input).collect();
            let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
            let d = dropout.map(|(p, seed)| Dropout {
                p,
                seed: seed.wrapping_mul(1_000_003).wrapping_add(ci as u64),
            });
            let (l, g) = loss_and_grads(p, &inputs, &labels, d)?;
            Ok((
                l * chunk.len() as f64 / n,
                g.into_iter().map(|v| v * chunk.len() as f64 / n).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

/// Unstable-class probability of every example, in order.
pub fn predict_unstable(p: &Params, inputs: &[Input]) -> Result<Vec<f64>> {
    let parts: Vec<Vec<f64>> = inputs
        .par_chunks(CHUNK)
        .map(|chunk| {
            Ok(forward_batch(p, chunk)?
                .iter()
                .map(|o| o.probs[UNSTABLE])
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

fn scored(p: &Params, set: &[Example]) -> Result<Vec<(f64, Verdict)>> {
    let inputs: Vec<Input> = set.iter().map(|e| e.input).collect();
    let probs = predict_unstable(p, &inputs)?;
    Ok(probs
        .into_iter()
        .zip(set)
        .map(|(pu, e)| {
            (
                pu,
                if e.label == 0 {
                    Verdict::Stable
                } else {
                    Verdict::Unstable
                },
            )
        })
        .collect())
}

fn mean_loss(scores: &[(f64, Verdict)]) -> f64 {
    let eps = 1e-300;
    scores
        .iter()
        .map(|&(pu, t)| {
            -(if t == Verdict::Unstable { pu } else { 1.0 - pu })
                .max(eps)
                .ln()
        })
        .sum::<f64>()
        / scores.len() as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -=
                cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Mini-batch Adam with early stopping on validation macro-F1 (at the
/// argmax decision). Returns the best checkpoint and per-epoch history.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config(
            "training and validation sets must be non-empty",
        ));
    }
    let mut params = Params::init(arch, cfg.seed)?;
    let mut adam = Adam {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY, f64::INFINITY);
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = idx.iter().map(|&i| train_set[i]).collect();
            let seed = cfg
                .seed
                .wrapping_mul(0x9e37_79b9)
                .wrapping_add((epoch * 100_000 + bi) as u64);
            let drop = (cfg.dropout > 0.0).then_some((cfg.dropout, seed));
            let (loss, grad) = batch_gradient(&params, &batch, drop)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "loss/gradient at epoch {epoch}, batch {bi}"
                )));
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut params.data, &grad, cfg);
        }
        let train_scores = scored(&params, train_set)?;
        let train_acc = evaluate_probabilities(&train_scores, 0.5)?.accuracy;
        let val_scores = scored(&params, val_set)?;
        let val_report = evaluate_probabilities(&val_scores, 0.5)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: train_acc,
            val_loss: mean_loss(&val_scores),
            val_macro_f1: val_report.macro_avg.f1,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.3} val loss {:.4} val macro-F1 {:.3}",
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_macro_f1
        );
        let better = stats.val_macro_f1 > best.2
            || (stats.val_macro_f1 == best.2 && stats.val_loss < best.3);
        if better {
            best = (params.clone(), epoch, stats.val_macro_f1, stats.val_loss);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(stats);
        if since_best >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        best_epoch: best.1,
        history,
    })
}

/// Table-1 style report on a labeled set at threshold `tau`.
pub fn evaluate(p: &Params, set: &[Example], tau: f64) -> Result<EvalReport> {
    let s = scored(p, set)?;
    let pairs: Vec<(Verdict, Verdict)> = s
        .iter()
        .map(|&(pu, t)| (t, super::metrics::predict(pu, tau)))
        .collect();
    report_from_predictions(&pairs, tau)
}

pub fn threshold_sweep(
    p: &Params,
    set: &[Example],
    grid: &[f64],
    target_precision: f64,
) -> Result<ThresholdSweep> {
    sweep_threshold(&scored(p, set)?, grid, target_precision)
}
