//! Three-test heuristic that labels a post-shed trajectory.
//!
//! The tests run in a fixed order: a large excursion from the pre-attack
//! equilibrium is UNSTABLE outright; a flat tail is STABLE; otherwise the
//! trend of the oscillation envelope over the tail decides.

use crate::error::{Error, Result};
use crate::sim::{channel_class, ChannelClass, Trajectory};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Stable,
    Unstable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "STABLE",
            Verdict::Unstable => "UNSTABLE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecidingTest {
    Excursion,
    Variance,
    Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub verdict: Verdict,
    pub deciding_test: DecidingTest,
    /// The channel that triggered the verdict, or for STABLE verdicts the
    /// one closest to failing.
    pub deciding_channel: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub class: ChannelClass,
    /// Allowed relative deviation from equilibrium.
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub excursion_bands: Vec<Band>,
    /// Channel classes examined by the tail tests.
    pub tail_classes: Vec<ChannelClass>,
    pub tail_fraction: f64,
    pub variance_floor: f64,
    pub n_envelope_windows: usize,
    pub slope_threshold: f64,
    pub min_duration: f64,
    pub epsilon: f64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            excursion_bands: vec![
                Band {
                    class: ChannelClass::Voltage,
                    band: 0.20,
                },
                Band {
                    class: ChannelClass::Frequency,
                    band: 0.05,
                },
            ],
            tail_classes: vec![ChannelClass::Voltage, ChannelClass::Frequency],
            tail_fraction: 0.25,
            variance_floor: 1e-6,
            n_envelope_windows: 6,
            slope_threshold: -1e-3,
            min_duration: 50.0,
            epsilon: 1e-12,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 0.5) {
            return Err(Error::config("tail_fraction must lie in (0, 0.5]"));
        }
        if self.n_envelope_windows < 2 {
            return Err(Error::config("n_envelope_windows must be at least 2"));
        }
        if !(self.slope_threshold < 0.0) {
            return Err(Error::config("slope_threshold must be negative"));
        }
        if self.excursion_bands.iter().any(|b| !(b.band > 0.0)) {
            return Err(Error::config("excursion bands must be positive"));
        }
        Ok(())
    }

    fn band(&self, class: ChannelClass) -> Option<f64> {
        self.excursion_bands
            .iter()
            .find(|b| b.class == class)
            .map(|b| b.band)
    }
}

/// Outcome of a test that may leave the decision to the next one.
#[derive(Debug, Clone, PartialEq)]
pub enum TestResult {
    Decided(Verdict, Option<String>),
    Pass,
}

fn reference(traj: &Trajectory) -> Result<&[f64]> {
    if traj.equilibrium.len() != traj.channels.len() {
        return Err(Error::MissingChannel("equilibrium reference".into()));
    }
    Ok(&traj.equilibrium)
}

/// Channels whose class is examined by the tail tests.
fn tail_channels(traj: &Trajectory, cfg: &LabelerConfig) -> Vec<usize> {
    (0..traj.channels.len())
        .filter(|&c| cfg.tail_classes.contains(&channel_class(&traj.channels[c])))
        .collect()
}

/// UNSTABLE iff some banded channel leaves its band around equilibrium at
/// any sample. The band edge itself is inside.
pub fn excursion_test(traj: &Trajectory, cfg: &LabelerConfig) -> Result<TestResult> {
    let eq = reference(traj)?;
    if traj.is_empty() {
        return Err(Error::NotViable("empty trajectory".into()));
    }
    for (c, name) in traj.channels.iter().enumerate() {
        let Some(band) = cfg.band(channel_class(name)) else {
            continue;
        };
        let limit = band * eq[c].abs();
        if traj.samples[c]
            .iter()
            .any(|&x| !((x - eq[c]).abs() <= limit))
        {
            return Ok(TestResult::Decided(Verdict::Unstable, Some(name.clone())));
        }
    }
    Ok(TestResult::Pass)
}

/// Last `tail_fraction` of each sample vector.
fn tail_range(len: usize, cfg: &LabelerConfig) -> std::ops::Range<usize> {
    let n = ((len as f64) * cfg.tail_fraction).round() as usize;
    len - n.min(len)..len
}

fn scale(eq: f64) -> f64 {
    if eq.abs() < 1e-9 {
        1.0
    } else {
        eq * eq
    }
}

/// STABLE iff every examined channel has normalized tail variance below the
/// floor.
pub fn variance_test(traj: &Trajectory, cfg: &LabelerConfig) -> Result<TestResult> {
    let eq = reference(traj)?;
    let range = tail_range(traj.len(), cfg);
    if range.len() < 4 {
        return Err(Error::NotViable(format!(
            "tail has {} samples, need 4",
            range.len()
        )));
    }
    let mut worst: Option<(f64, usize)> = None;
    for c in tail_channels(traj, cfg) {
        let tail = &traj.samples[c][range.clone()];
        let var = variance(tail) / scale(eq[c]);
        if !(var < cfg.variance_floor) {
            return Ok(TestResult::Pass);
        }
        if worst.is_none_or(|(w, _)| var > w) {
            worst = Some((var, c));
        }
    }
    Ok(TestResult::Decided(
        Verdict::Stable,
        worst.map(|(_, c)| traj.channels[c].clone()),
    ))
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Least-squares slope of `log(RMS + eps)` against window-center time,
/// after removing the mean of `x`.
pub fn envelope_slope(times: &[f64], x: &[f64], n_windows: usize, eps: f64) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let w = n / n_windows;
    let mut pts = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        let (lo, hi) = (k * w, (k + 1) * w);
        let ms = x[lo..hi].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w as f64;
        let tc = 0.5 * (times[lo] + times[hi - 1]);
        pts.push((tc, (ms.sqrt() + eps).ln()));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let num: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    num / den
}

/// Per channel envelope trend over the tail; any channel whose slope is
/// not below the threshold makes the verdict UNSTABLE. Channels already
/// settled below the variance floor do not take part.
pub fn envelope_slope_test(traj: &Trajectory, cfg: &LabelerConfig) -> Result<Verdict> {
    envelope_decision(traj, cfg).map(|(v, _)| v)
}

fn envelope_decision(traj: &Trajectory, cfg: &LabelerConfig) -> Result<(Verdict, Option<String>)> {
    let range = tail_range(traj.len(), cfg);
    if range.len() < cfg.n_envelope_windows * 4 {
        return Err(Error::NotViable(format!(
            "tail has {} samples, need {}",
            range.len(),
            cfg.n_envelope_windows * 4
        )));
    }
    let eq = reference(traj)?;
    let times = &traj.times[range.clone()];
    let mut worst: Option<(f64, usize)> = None;
    for c in tail_channels(traj, cfg) {
        let tail = &traj.samples[c][range.clone()];
        if variance(tail) / scale(eq[c]) < cfg.variance_floor {
            continue;
        }
        let slope = envelope_slope(
            times,
            &traj.samples[c][range.clone()],
            cfg.n_envelope_windows,
            cfg.epsilon,
        );
        if !(slope < cfg.slope_threshold) {
            return Ok((Verdict::Unstable, Some(traj.channels[c].clone())));
        }
        if worst.is_none_or(|(w, _)| slope > w) {
            worst = Some((slope, c));
        }
    }
    Ok((
        Verdict::Stable,
        worst.map(|(_, c)| traj.channels[c].clone()),
    ))
}

/// Labels a post-shed trajectory, whose first sample is at the shed time.
pub fn label(traj: &Trajectory, cfg: &LabelerConfig) -> Result<Label> {
    cfg.validate()?;
    let duration = match (traj.times.first(), traj.times.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    if duration < cfg.min_duration {
        return Err(Error::NotViable(format!(
            "post-shed duration {duration:.2} s is below {:.0} s",
            cfg.min_duration
        )));
    }
    if let TestResult::Decided(verdict, ch) = excursion_test(traj, cfg)? {
        return Ok(Label {
            verdict,
            deciding_test: DecidingTest::Excursion,
            deciding_channel: ch,
        });
    }
    if let TestResult::Decided(verdict, ch) = variance_test(traj, cfg)? {
        return Ok(Label {
            verdict,
            deciding_test: DecidingTest::Variance,
            deciding_channel: ch,
        });
    }
    let (verdict, ch) = envelope_decision(traj, cfg)?;
    Ok(Label {
        verdict,
        deciding_test: DecidingTest::Envelope,
        deciding_channel: ch,
    })
}

/// Labels the part of a full scenario trajectory from its shed event on.
pub fn label_after_shed(traj: &Trajectory, cfg: &LabelerConfig) -> Result<Label> {
    let shed = traj
        .event("shed")
        .ok_or_else(|| Error::NotViable("trajectory has no shed event".into()))?;
    label(&traj.window(shed.t, f64::INFINITY), cfg)
}
