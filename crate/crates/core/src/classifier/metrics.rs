use crate::error::{Error, Result};
use crate::labeler::Verdict;
use serde::{Deserialize, Serialize};
use std::fmt;

/// STABLE exactly when the unstable probability is below `tau`.
pub fn predict(p_unstable: f64, tau: f64) -> Verdict {
    if p_unstable < tau {
        Verdict::Stable
    } else {
        Verdict::Unstable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub stable: ClassMetrics,
    pub unstable: ClassMetrics,
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    /// `confusion[true][predicted]`, STABLE first.
    pub confusion: [[usize; 2]; 2],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn class_index(v: Verdict) -> usize {
    match v {
        Verdict::Stable => 0,
        Verdict::Unstable => 1,
    }
}

/// Metrics from (truth, prediction) pairs. A precision with no predicted
/// members of the class is reported as 0.
pub fn report_from_predictions(pairs: &[(Verdict, Verdict)], tau: f64) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let mut cm = [[0usize; 2]; 2];
    for &(t, p) in pairs {
        cm[class_index(t)][class_index(p)] += 1;
    }
    let class = |c: usize| {
        let tp = cm[c][c];
        let predicted = cm[0][c] + cm[1][c];
        let support = cm[c][0] + cm[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            support,
        }
    };
    let (s, u) = (class(0), class(1));
    let n = pairs.len();
    let avg = |w0: f64, w1: f64| ClassMetrics {
        precision: w0 * s.precision + w1 * u.precision,
        recall: w0 * s.recall + w1 * u.recall,
        f1: w0 * s.f1 + w1 * u.f1,
        support: n,
    };
    Ok(EvalReport {
        tau,
        stable: s,
        unstable: u,
        accuracy: ratio(cm[0][0] + cm[1][1], n),
        macro_avg: avg(0.5, 0.5),
        weighted_avg: avg(ratio(s.support, n), ratio(u.support, n)),
        confusion: cm,
    })
}

/// Report for unstable probabilities thresholded at `tau`.
pub fn evaluate_probabilities(scored: &[(f64, Verdict)], tau: f64) -> Result<EvalReport> {
    let pairs: Vec<(Verdict, Verdict)> =
        scored.iter().map(|&(p, t)| (t, predict(p, tau))).collect();
    report_from_predictions(&pairs, tau)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Classification report, tau = {}", self.tau)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:>12} {:>9} {:>9} {:>9} {:>9}",
            "", "precision", "recall", "f1-score", "support"
        )?;
        writeln!(f)?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, m: &ClassMetrics| {
            writeln!(
                f,
                "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                name, m.precision, m.recall, m.f1, m.support
            )
        };
        row(f, "STABLE", &self.stable)?;
        row(f, "UNSTABLE", &self.unstable)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:>12} {:>9} {:>9} {:>9.2} {:>9}",
            "accuracy", "", "", self.accuracy, self.macro_avg.support
        )?;
        row(f, "macro avg", &self.macro_avg)?;
        row(f, "weighted avg", &self.weighted_avg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub stable_precision: f64,
    pub stable_recall: f64,
    pub n_predicted_stable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub target_precision: f64,
    /// Largest grid τ whose stable precision reaches the target, if any.
    pub tau: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

/// 50 log-spaced thresholds from 1e-3 to 0.999.
pub fn default_tau_grid() -> Vec<f64> {
    let (lo, hi) = (1e-3f64.ln(), 0.999f64.ln());
    (0..50)
        .map(|i| (lo + (hi - lo) * i as f64 / 49.0).exp())
        .collect()
}

/// Stable precision and recall over a τ grid. A τ with no stable
/// predictions never meets the target.
pub fn sweep_threshold(
    scored: &[(f64, Verdict)],
    grid: &[f64],
    target_precision: f64,
) -> Result<ThresholdSweep> {
    if scored.is_empty() {
        return Err(Error::config("cannot sweep thresholds on an empty split"));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut tau = None;
    for &t in grid {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::config("thresholds must lie in (0, 1)"));
        }
        let r = evaluate_probabilities(scored, t)?;
        let n_pred = r.confusion[0][0] + r.confusion[1][0];
        curve.push(CurvePoint {
            tau: t,
            stable_precision: r.stable.precision,
            stable_recall: r.stable.recall,
            n_predicted_stable: n_pred,
        });
        if n_pred > 0 && r.stable.precision >= target_precision && tau.is_none_or(|best| t > best) {
            tau = Some(t);
        }
    }
    Ok(ThresholdSweep {
        target_precision,
        tau,
        curve,
    })
}
