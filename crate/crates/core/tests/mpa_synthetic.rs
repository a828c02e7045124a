#[path = "support/signals.rs"]
mod signals;

use gridshed::mpa::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use signals::*;

#[test]
fn two_mode_recovery() {
    let cfg = PronyConfig::default();
    let t = times(cfg.window_len, cfg.sample_dt);
    let x: Vec<f64> = t
        .iter()
        .map(|&t| cosine(0.1, 1.2, t) + cosine(-0.5, 0.3, t))
        .collect();
    let modes = prony_fit(&x, cfg.model_order, cfg.sample_dt).unwrap();
    let c = classify_modes(&modes, &x, &cfg);
    for (sigma, f) in [(0.1, 1.2), (-0.5, 0.3)] {
        let m = c
            .modes
            .iter()
            .min_by(|a, b| (a.freq - f).abs().partial_cmp(&(b.freq - f).abs()).unwrap())
            .unwrap();
        assert!((m.freq - f).abs() <= 0.01 * f, "freq {m:?}");
        assert!((m.sigma - sigma).abs() <= 0.05 * sigma.abs(), "sigma {m:?}");
    }
    let oscillatory = c.modes.iter().filter(|m| m.freq > 0.05).count();
    assert_eq!(oscillatory, 2, "{:?}", c.modes);
    assert!(c.fit_residual < 0.01, "{}", c.fit_residual);
}

#[test]
fn energy_fractions_sum_to_at_most_one() {
    let cfg = PronyConfig::default();
    let t = times(cfg.window_len, cfg.sample_dt);
    let x: Vec<f64> = t
        .iter()
        .map(|&t| cosine(0.05, 0.9, t) + 0.3 * cosine(-1.0, 2.0, t))
        .collect();
    let modes = prony_fit(&x, cfg.model_order, cfg.sample_dt).unwrap();
    let total: f64 = modes.iter().map(|m| m.energy_fraction).sum();
    assert!(total <= 1.0 + 1e-9);
    let c = classify_modes(&modes, &x, &cfg);
    assert!(c.modes.iter().map(|m| m.energy_fraction).sum::<f64>() <= 1.0 + 1e-9);
}

#[test]
fn scale_and_offset_invariance() {
    let cfg = PronyConfig::default();
    let t = times(cfg.window_len, cfg.sample_dt);
    let x: Vec<f64> = t
        .iter()
        .map(|&t| cosine(0.08, 0.7, t) + 0.2 * cosine(-0.3, 1.9, t))
        .collect();
    let a = analyze_window(&x, &cfg).unwrap();
    let scaled: Vec<f64> = x.iter().map(|v| 3.7 * v).collect();
    let b = analyze_window(&scaled, &cfg).unwrap();
    assert_eq!(a.modes.len(), b.modes.len());
    for (ma, mb) in a.modes.iter().zip(&b.modes) {
        assert!((ma.sigma - mb.sigma).abs() < 1e-9);
        assert!((ma.freq - mb.freq).abs() < 1e-9);
        assert!((ma.energy_fraction - mb.energy_fraction).abs() < 1e-9);
        assert!((3.7 * ma.amplitude - mb.amplitude).abs() < 1e-9 * mb.amplitude.max(1.0));
    }
    assert_eq!(window_unstable(&a, &cfg), window_unstable(&b, &cfg));
    let shifted: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
    let c = analyze_window(&shifted, &cfg).unwrap();
    assert_eq!(window_unstable(&a, &cfg), window_unstable(&c, &cfg));
}

#[test]
fn constant_stream_never_alarms() {
    let cfg = PronyConfig::default();
    let st = stream(&cfg, &vec![1.04; 4000]);
    assert!(!st.alarmed);
    assert!(st.windows_evaluated > 150);
}

#[test]
fn decaying_stream_never_alarms() {
    let cfg = PronyConfig::default();
    let x: Vec<f64> = times(4000, cfg.sample_dt)
        .iter()
        .map(|&t| 1.0 + 0.05 * cosine(-0.2, 0.8, t))
        .collect();
    let st = stream(&cfg, &x);
    assert!(!st.alarmed, "{:?}", st.alarm_time);
}

#[test]
fn noisy_growth_alarms_quickly() {
    let cfg = PronyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // 40 dB below the initial oscillation power.
    let noise = Normal::new(0.0, 0.01 / 2f64.sqrt()).unwrap();
    let x: Vec<f64> = times(1200, cfg.sample_dt)
        .iter()
        .map(|&t| cosine(0.1, 0.8, t) + noise.sample(&mut rng))
        .collect();
    let st = stream(&cfg, &x);
    let t_alarm = st.alarm_time.expect("alarm");
    let j = window_index(&cfg, t_alarm);
    assert!(j < cfg.consecutive_k + 2, "alarmed at window {j}");
}
