use super::arch::Architecture;
use super::metrics::predict;
use super::network::{forward_batch, Input, UNSTABLE};
use super::params::Params;
use crate::error::{Error, Result};
use crate::labeler::Verdict;
use crate::sim::Trajectory;
use serde::{Deserialize, Serialize};

/// Channel selection and z-normalization applied to raw trajectories
/// before they reach the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaling {
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        let n = self.channels.len();
        if self.mean.len() != n || self.std.len() != n {
            return Err(Error::config("input scaling vectors differ in length"));
        }
        if n != arch.channels {
            return Err(Error::Dimension {
                expected: arch.channels,
                got: n,
            });
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("input scaling std must be positive"));
        }
        Ok(())
    }

    /// Normalized channel-major input from the last `steps` samples of
    /// `traj`.
    pub fn input(&self, traj: &Trajectory, steps: usize) -> Result<Vec<f64>> {
        if traj.len() < steps {
            return Err(Error::NotViable(format!(
                "window needs {steps} samples, trajectory has {}",
                traj.len()
            )));
        }
        let start = traj.len() - steps;
        let mut x = Vec::with_capacity(self.channels.len() * steps);
        for (c, name) in self.channels.iter().enumerate() {
            let col = traj
                .channel(name)
                .ok_or_else(|| Error::MissingChannel(name.clone()))?;
            x.extend(
                col[start..]
                    .iter()
                    .map(|v| (v - self.mean[c]) / self.std[c]),
            );
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("recommendation window".into()));
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub load_index: usize,
    pub p_unstable: f64,
    pub label_at_tau: Verdict,
}

/// Scores shedding each load after the most recent window of `traj`.
pub fn recommend(
    p: &Params,
    scaling: &InputScaling,
    traj: &Trajectory,
    tau: f64,
) -> Result<Vec<Recommendation>> {
    scaling.check(&p.arch)?;
    let x = scaling.input(traj, p.arch.steps)?;
    let inputs: Vec<Input> = (0..p.arch.n_loads)
        .map(|l| Input {
            x: &x,
            load_index: l,
        })
        .collect();
    Ok(forward_batch(p, &inputs)?
        .iter()
        .enumerate()
        .map(|(l, o)| Recommendation {
            load_index: l,
            p_unstable: o.probs[UNSTABLE],
            label_at_tau: predict(o.probs[UNSTABLE], tau),
        })
        .collect())
}
