//! Shared fixtures for the benchmarks.

use gridshed::attack::{AttackSpec, AttackVar, Target};
use gridshed::grid::reference_case;
use gridshed::sim::{find_equilibrium, Equilibrium};

pub fn equilibrium() -> Equilibrium {
    find_equilibrium(&reference_case()).expect("reference case has an equilibrium")
}

/// Speed at bus 2 fed back into the voltage at bus 4.
pub fn sample_attack(gain: f64) -> AttackSpec {
    AttackSpec::new(
        Target {
            node: 2,
            var: AttackVar::Omega,
        },
        Target {
            node: 4,
            var: AttackVar::V,
        },
        gain,
        1.0,
    )
}

/// A lightly damped two-mode ringdown sampled at 20 Hz.
pub fn ringdown(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let t = k as f64 * 0.05;
            1.0 + 0.02 * (-0.1 * t).exp() * (2.0 * std::f64::consts::PI * 0.8 * t).cos()
                + 0.01 * (0.03 * t).exp() * (2.0 * std::f64::consts::PI * 1.7 * t + 0.4).cos()
        })
        .collect()
}
