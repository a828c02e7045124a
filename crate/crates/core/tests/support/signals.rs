//! Synthetic ringdown signals for the modal detector suites.
#![allow(dead_code)]

use gridshed::mpa::{AlarmState, PronyConfig};
use std::f64::consts::PI;

pub fn cosine(sigma: f64, f: f64, t: f64) -> f64 {
    (sigma * t).exp() * (2.0 * PI * f * t).cos()
}

pub fn times(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|k| k as f64 * dt).collect()
}

/// Feeds `x` to a fresh alarm state in uneven chunks.
pub fn stream(cfg: &PronyConfig, x: &[f64]) -> AlarmState {
    let t = times(x.len(), cfg.sample_dt);
    let mut st = AlarmState::new();
    for (tc, xc) in t.chunks(7).zip(x.chunks(7)) {
        st.update(tc, xc, cfg).unwrap();
    }
    st
}

/// Index of the window whose last sample is at `t_alarm`; the first window
/// holds samples `0..W` and window `j` ends at `W - 1 + j * stride`.
pub fn window_index(cfg: &PronyConfig, t_alarm: f64) -> usize {
    ((t_alarm / cfg.sample_dt).round() as usize + 1 - cfg.window_len) / cfg.stride
}
