//! Sliding-window modified Prony analysis.
//!
//! Each window is fitted as a sum of damped complex exponentials: linear
//! prediction coefficients by least squares on the Hankel system, discrete
//! poles from the companion matrix, amplitudes by Vandermonde least
//! squares. Weak or unphysical modes are rejected and the amplitudes are
//! refitted once. A channel alarms after several consecutive windows that
//! contain a well-fitted growing mode.

use crate::error::{Error, Result};
use crate::sim::{channel_class, ChannelClass, Trajectory};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PronyConfig {
    pub window_len: usize,
    pub stride: usize,
    pub model_order: usize,
    /// Minimum energy fraction for a mode to be kept.
    pub energy_floor: f64,
    /// Growth rate (1/s) above which a mode counts as unstable.
    pub damping_alarm: f64,
    pub min_mode_energy: f64,
    pub fit_residual_max: f64,
    pub consecutive_k: usize,
    pub sample_dt: f64,
    /// Windows whose RMS about the mean is below this fraction of the mean
    /// level are treated as constant.
    pub relative_floor: f64,
    /// Modes with |σ| above this (1/s) are dropped as unphysical.
    pub max_abs_sigma: f64,
}

impl Default for PronyConfig {
    fn default() -> Self {
        PronyConfig {
            window_len: 100,
            stride: 20,
            model_order: 12,
            energy_floor: 0.02,
            damping_alarm: 0.01,
            min_mode_energy: 0.05,
            fit_residual_max: 0.2,
            consecutive_k: 3,
            sample_dt: 0.05,
            relative_floor: 1e-9,
            max_abs_sigma: 50.0,
        }
    }
}

impl PronyConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !(self.model_order >= 1 && self.window_len > 2 * self.model_order) {
            return Err(Error::config("window_len must exceed 2 * model_order >= 2"));
        }
        if !(frac(self.energy_floor) && frac(self.min_mode_energy) && frac(self.fit_residual_max)) {
            return Err(Error::config(
                "energy_floor, min_mode_energy and fit_residual_max must lie in (0, 1)",
            ));
        }
        if self.consecutive_k == 0 || self.stride == 0 {
            return Err(Error::config("consecutive_k and stride must be at least 1"));
        }
        if !(self.sample_dt > 0.0) {
            return Err(Error::config("sample_dt must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub sigma: f64,
    pub freq: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub energy_fraction: f64,
}

impl Mode {
    /// Continuous-time exponent of the mode's upper pole.
    pub fn lambda(&self) -> Complex64 {
        Complex64::new(self.sigma, 2.0 * PI * self.freq)
    }

    /// Whether the mode stands for a conjugate pole pair. Real poles have
    /// zero frequency, or the Nyquist frequency when negative.
    fn is_pair(&self, dt: f64) -> bool {
        self.freq > 0.0 && self.freq < 0.5 / dt * (1.0 - 1e-9)
    }
}

fn mean_removed(window: &[f64]) -> Vec<f64> {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    window.iter().map(|v| v - mean).collect()
}

fn is_flat(window: &[f64], x: &[f64], floor: f64) -> bool {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    rms == 0.0 || rms < floor * mean.abs()
}

/// Poles in the discrete domain, one per retained pole pair or real pole.
fn poles_of(modes: &[Mode], dt: f64) -> Vec<Complex64> {
    let mut z = Vec::new();
    for m in modes {
        let p = (m.lambda() * dt).exp();
        z.push(p);
        if m.is_pair(dt) {
            z.push(p.conj());
        }
    }
    z
}

/// Complex amplitudes `b` minimizing `|x - V b|` with `V[k][i] = z_i^k`.
fn vandermonde_fit(x: &[f64], z: &[Complex64]) -> Option<Vec<Complex64>> {
    let w = x.len();
    let m = z.len();
    if m == 0 {
        return Some(Vec::new());
    }
    let v = DMatrix::from_fn(w, m, |k, i| z[i].powi(k as i32));
    let rhs = DVector::from_iterator(w, x.iter().map(|&r| Complex64::new(r, 0.0)));
    let svd = v.svd(true, true);
    let smax = svd.singular_values.max();
    let b = svd.solve(&rhs, 1e-12 * smax).ok()?;
    Some(b.iter().copied().collect())
}

/// Builds modes from poles and amplitudes. Conjugate pairs become one mode
/// with non-negative frequency; energy fractions are shares of the summed
/// component energies over the window.
fn assemble(z: &[Complex64], b: &[Complex64], w: usize, dt: f64) -> Vec<Mode> {
    let mut used = vec![false; z.len()];
    let mut raw = Vec::new();
    for i in 0..z.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let lam = z[i].ln() / dt;
        let tol = 1e-8 * z[i].norm().max(1e-300);
        let oscillatory = z[i].im.abs() > tol;
        if oscillatory {
            // Pair with the closest unused conjugate.
            let partner = (0..z.len()).filter(|&j| !used[j]).min_by(|&a, &c| {
                (z[a] - z[i].conj())
                    .norm()
                    .partial_cmp(&(z[c] - z[i].conj()).norm())
                    .unwrap()
            });
            if let Some(j) = partner {
                used[j] = true;
            }
            let (zi, bi) = if z[i].im > 0.0 {
                (z[i], b[i])
            } else {
                (z[i].conj(), b[i].conj())
            };
            let lam = zi.ln() / dt;
            let energy: f64 = (0..w)
                .map(|k| (2.0 * (bi * zi.powi(k as i32)).re).powi(2))
                .sum();
            raw.push((
                Mode {
                    sigma: lam.re,
                    freq: lam.im / (2.0 * PI),
                    amplitude: 2.0 * bi.norm(),
                    phase: bi.arg(),
                    energy_fraction: 0.0,
                },
                energy,
            ));
        } else {
            let zr = z[i].re;
            let br = b[i].re;
            let energy: f64 = (0..w).map(|k| (br * zr.powi(k as i32)).powi(2)).sum();
            // A negative real pole alternates sign every sample: Nyquist.
            let freq = if zr < 0.0 { 0.5 / dt } else { 0.0 };
            raw.push((
                Mode {
                    sigma: lam.re,
                    freq,
                    amplitude: br.abs(),
                    phase: if br < 0.0 { PI } else { 0.0 },
                    energy_fraction: 0.0,
                },
                energy,
            ));
        }
    }
    let total: f64 = raw.iter().map(|r| r.1).sum();
    let mut modes: Vec<Mode> = raw
        .into_iter()
        .map(|(mut m, e)| {
            m.energy_fraction = if total > 0.0 { e / total } else { 0.0 };
            m
        })
        .collect();
    modes.sort_by(|a, b| b.energy_fraction.partial_cmp(&a.energy_fraction).unwrap());
    modes
}

/// Fits `n` exponentials to a mean-removed window sampled at `dt`. A window
/// with no variation yields no modes.
pub fn prony_fit(window: &[f64], n: usize, dt: f64) -> Result<Vec<Mode>> {
    let w = window.len();
    if n == 0 || w <= 2 * n {
        return Err(Error::config(format!(
            "window of {w} samples is too short for order {n}"
        )));
    }
    let x = mean_removed(window);
    if x.iter().all(|v| *v == 0.0) {
        return Ok(Vec::new());
    }
    // x[k] = sum_i c_i x[k - i] for k = n..w.
    let rows = w - n;
    let a = DMatrix::from_fn(rows, n, |r, i| x[r + n - 1 - i]);
    let rhs = DVector::from_iterator(rows, x[n..].iter().copied());
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Ok(Vec::new());
    }
    let c = svd
        .solve(&rhs, 1e-10 * smax)
        .map_err(|e| Error::NonFinite(format!("linear prediction: {e}")))?;
    // Companion matrix of z^n - c_1 z^(n-1) - ... - c_n.
    let comp = DMatrix::from_fn(n, n, |r, col| {
        if r == 0 {
            c[col]
        } else if r == col + 1 {
            1.0
        } else {
            0.0
        }
    });
    let z: Vec<Complex64> = comp
        .complex_eigenvalues()
        .iter()
        .copied()
        .filter(|p| p.norm() > 1e-12)
        .collect();
    let Some(b) = vandermonde_fit(&x, &z) else {
        return Ok(Vec::new());
    };
    Ok(assemble(&z, &b, w, dt))
}

/// Retained modes after noise rejection, with refitted amplitudes, and the
/// relative L2 residual of their reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub modes: Vec<Mode>,
    pub fit_residual: f64,
}

/// Drops weak and unphysical modes and refits the rest once.
pub fn classify_modes(modes: &[Mode], window: &[f64], cfg: &PronyConfig) -> Classified {
    let x = mean_removed(window);
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let kept: Vec<Mode> = modes
        .iter()
        .copied()
        .filter(|m| m.energy_fraction >= cfg.energy_floor && m.sigma.abs() <= cfg.max_abs_sigma)
        .collect();
    if kept.is_empty() {
        return Classified {
            modes: kept,
            fit_residual: if norm == 0.0 { 0.0 } else { 1.0 },
        };
    }
    // The constant left by mean removal is fitted alongside as a nuisance
    // term, so dropping it as a weak mode does not count against the fit.
    let mut z = poles_of(&kept, cfg.sample_dt);
    z.push(Complex64::new(1.0, 0.0));
    let Some(b) = vandermonde_fit(&x, &z) else {
        return Classified {
            modes: Vec::new(),
            fit_residual: 1.0,
        };
    };
    let mut err = 0.0;
    for (k, xk) in x.iter().enumerate() {
        let fit: Complex64 = z
            .iter()
            .zip(&b)
            .map(|(zi, bi)| bi * zi.powi(k as i32))
            .sum();
        err += (xk - fit.re).powi(2);
    }
    let mut refit = Vec::with_capacity(kept.len());
    let mut j = 0;
    for m in &kept {
        let bi = b[j];
        let pair = m.is_pair(cfg.sample_dt);
        j += if pair { 2 } else { 1 };
        let (amplitude, phase) = if pair {
            (2.0 * bi.norm(), bi.arg())
        } else {
            (bi.re.abs(), if bi.re < 0.0 { PI } else { 0.0 })
        };
        refit.push(Mode {
            amplitude,
            phase,
            ..*m
        });
    }
    Classified {
        modes: refit,
        fit_residual: if norm == 0.0 { 0.0 } else { err.sqrt() / norm },
    }
}

/// Fit and classify one window.
pub fn analyze_window(window: &[f64], cfg: &PronyConfig) -> Result<Classified> {
    let x = mean_removed(window);
    if is_flat(window, &x, cfg.relative_floor) {
        return Ok(Classified {
            modes: Vec::new(),
            fit_residual: 0.0,
        });
    }
    let modes = prony_fit(window, cfg.model_order, cfg.sample_dt)?;
    Ok(classify_modes(&modes, window, cfg))
}

/// Whether a classified window indicates a growing mode.
pub fn window_unstable(c: &Classified, cfg: &PronyConfig) -> bool {
    c.fit_residual <= cfg.fit_residual_max
        && c.modes
            .iter()
            .any(|m| m.sigma > cfg.damping_alarm && m.energy_fraction >= cfg.min_mode_energy)
}

/// Streaming detector state for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmState {
    buffer: VecDeque<f64>,
    last_time: Option<f64>,
    since_window: usize,
    pub windows_evaluated: usize,
    pub consecutive: usize,
    pub alarmed: bool,
    pub alarm_time: Option<f64>,
    pub modes_at_alarm: Vec<Mode>,
    /// Right-edge time and verdict of the most recent window.
    pub last_window: Option<(f64, bool)>,
}

impl Default for AlarmState {
    fn default() -> Self {
        Self::new()
    }
}

impl AlarmState {
    pub fn new() -> Self {
        AlarmState {
            buffer: VecDeque::new(),
            last_time: None,
            since_window: 0,
            windows_evaluated: 0,
            consecutive: 0,
            alarmed: false,
            alarm_time: None,
            modes_at_alarm: Vec::new(),
            last_window: None,
        }
    }

    /// Feeds samples taken at `times`, evaluating a window each time
    /// `stride` new samples have arrived once the buffer is full.
    pub fn update(&mut self, times: &[f64], values: &[f64], cfg: &PronyConfig) -> Result<()> {
        if times.len() != values.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: values.len(),
            });
        }
        let tol = 1e-6 * cfg.sample_dt;
        for (&t, &v) in times.iter().zip(values) {
            if let Some(prev) = self.last_time {
                if ((t - prev) - cfg.sample_dt).abs() > tol {
                    return Err(Error::config(format!(
                        "non-uniform sampling: step {:.6} s, expected {:.6} s",
                        t - prev,
                        cfg.sample_dt
                    )));
                }
            }
            self.last_time = Some(t);
            self.buffer.push_back(v);
            if self.buffer.len() > cfg.window_len {
                self.buffer.pop_front();
            }
            self.since_window += 1;
            let full = self.buffer.len() == cfg.window_len;
            let due = self.windows_evaluated == 0 || self.since_window >= cfg.stride;
            if full && due {
                self.since_window = 0;
                self.evaluate(t, cfg)?;
            }
        }
        Ok(())
    }

    fn evaluate(&mut self, t: f64, cfg: &PronyConfig) -> Result<()> {
        let window: Vec<f64> = self.buffer.iter().copied().collect();
        let c = analyze_window(&window, cfg)?;
        let unstable = window_unstable(&c, cfg);
        self.windows_evaluated += 1;
        self.last_window = Some((t, unstable));
        if unstable {
            self.consecutive += 1;
        } else {
            self.consecutive = 0;
        }
        if !self.alarmed && self.consecutive >= cfg.consecutive_k {
            self.alarmed = true;
            self.alarm_time = Some(t);
            self.modes_at_alarm = c.modes;
        }
        Ok(())
    }
}

/// Classes the detector watches by default.
pub const DETECT_CLASSES: [ChannelClass; 2] = [ChannelClass::Voltage, ChannelClass::Frequency];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAlarm {
    pub alarmed: bool,
    pub alarm_time: Option<f64>,
    pub modes_at_alarm: Vec<Mode>,
}

/// Runs the detector over every watched channel of a trajectory.
pub fn detect(
    traj: &Trajectory,
    cfg: &PronyConfig,
    classes: &[ChannelClass],
) -> Result<BTreeMap<String, ChannelAlarm>> {
    cfg.validate()?;
    let mut out = BTreeMap::new();
    for (c, name) in traj.channels.iter().enumerate() {
        if !classes.contains(&channel_class(name)) {
            continue;
        }
        let mut st = AlarmState::new();
        st.update(&traj.times, &traj.samples[c], cfg)?;
        out.insert(
            name.clone(),
            ChannelAlarm {
                alarmed: st.alarmed,
                alarm_time: st.alarm_time,
                modes_at_alarm: st.modes_at_alarm,
            },
        );
    }
    Ok(out)
}

/// Earliest alarm over all channels.
pub fn system_alarm(alarms: &BTreeMap<String, ChannelAlarm>) -> Option<f64> {
    alarms
        .values()
        .filter_map(|a| a.alarm_time)
        .fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.min(t))))
}
