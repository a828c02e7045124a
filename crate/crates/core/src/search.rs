//! Attack gain calibration and the search for attack pairs whose shed
//! outcomes disagree.

use crate::attack::{AttackSpec, AttackVar, Target};
use crate::error::Result;
use crate::grid::LoadDemand;
use crate::labeler::{label, LabelerConfig, Verdict};
use crate::sim::{simulate_from, Equilibrium, ScenarioConfig, Trajectory, DEFAULT_SHED_DELAY};
use crate::stability::attacked_growth_rate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainPolicy {
    /// Growth rate (1/s) of the attacked linearization the gain is tuned to.
    pub sigma_target: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub scan_points: usize,
    pub bisect_iters: usize,
}

impl Default for GainPolicy {
    fn default() -> Self {
        GainPolicy {
            sigma_target: 0.05,
            k_min: 1e-3,
            k_max: 1e4,
            scan_points: 50,
            bisect_iters: 40,
        }
    }
}

/// Smallest positive magnitude `k` with `growth(sign * k) > target`,
/// bracketed on a log grid and refined by bisection.
pub fn gain_for_growth(
    eq: &Equilibrium,
    loads: &LoadDemand,
    spec: &AttackSpec,
    sign: f64,
    target: f64,
    policy: &GainPolicy,
) -> Option<f64> {
    let above = |k: f64| {
        attacked_growth_rate(eq, loads, &spec.with_gain(sign * k)).map_or(true, |g| g > target)
    };
    let ratio = (policy.k_max / policy.k_min).ln();
    let n = policy.scan_points.max(2);
    let mut lo = 0.0;
    let mut hi = None;
    for i in 0..n {
        let k = policy.k_min * (ratio * i as f64 / (n - 1) as f64).exp();
        if above(k) {
            hi = Some(k);
            break;
        }
        lo = k;
    }
    let mut hi = hi?;
    for _ in 0..policy.bisect_iters {
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Signed gain of smallest magnitude reaching the policy's growth rate, or
/// `None` if neither sign destabilizes within `k_max`.
pub fn calibrate_gain(eq: &Equilibrium, spec: &AttackSpec, policy: &GainPolicy) -> Option<f64> {
    let loads = LoadDemand::from_model(&eq.model);
    let pos = gain_for_growth(eq, &loads, spec, 1.0, policy.sigma_target, policy);
    let neg = gain_for_growth(eq, &loads, spec, -1.0, policy.sigma_target, policy);
    match (pos, neg) {
        (Some(p), Some(n)) => Some(if p <= n { p } else { -n }),
        (Some(p), None) => Some(p),
        (None, Some(n)) => Some(-n),
        (None, None) => None,
    }
}

/// Small-signal critical gain: the growth rate crosses zero.
pub fn critical_gain(
    eq: &Equilibrium,
    spec: &AttackSpec,
    sign: f64,
    policy: &GainPolicy,
) -> Option<f64> {
    let loads = LoadDemand::from_model(&eq.model);
    gain_for_growth(eq, &loads, spec, sign, 1e-4, policy).map(|k| sign * k)
}

/// Labeler verdict on an attacked run without a shed, judged from the
/// usual shed time on. Runs that end early count as UNSTABLE.
pub fn no_shed_verdict(
    eq: &Equilibrium,
    spec: &AttackSpec,
    t_end: f64,
    cfg: &LabelerConfig,
) -> Result<Verdict> {
    let sc = ScenarioConfig {
        t_end,
        attack: Some(spec.clone()),
        ..Default::default()
    };
    let traj = simulate_from(eq, &sc)?;
    if traj.terminated_early.is_some() {
        return Ok(Verdict::Unstable);
    }
    let post = traj.window(spec.t_on + DEFAULT_SHED_DELAY, f64::INFINITY);
    Ok(label(&post, cfg)?.verdict)
}

/// Bisection on `|K|` along the sign of `k_hi` using simulations and the
/// labeler as the oracle. `k_hi` must give UNSTABLE; returns the smallest
/// UNSTABLE gain found.
pub fn critical_gain_by_simulation(
    eq: &Equilibrium,
    spec: &AttackSpec,
    k_lo: f64,
    k_hi: f64,
    iters: usize,
    t_end: f64,
    cfg: &LabelerConfig,
) -> Result<Option<f64>> {
    let unstable = |k: f64| -> Result<bool> {
        Ok(no_shed_verdict(eq, &spec.with_gain(k), t_end, cfg)? == Verdict::Unstable)
    };
    if !unstable(k_hi)? || unstable(k_lo)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (k_lo, k_hi);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if unstable(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Verdict of one attacked scenario with a shed, or `None` if it is not
/// labelable.
pub fn shed_verdict(
    eq: &Equilibrium,
    spec: &AttackSpec,
    load: usize,
    cfg: &LabelerConfig,
) -> Result<(Option<Verdict>, Trajectory)> {
    let traj = simulate_from(eq, &ScenarioConfig::attack_then_shed(spec.clone(), load))?;
    let verdict = crate::labeler::label_after_shed(&traj, cfg)
        .ok()
        .map(|l| l.verdict);
    Ok((verdict, traj))
}

/// Two attacks writing to the same target from different reads, for which
/// shedding the same load ends differently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OppositePair {
    pub stable: AttackSpec,
    pub unstable: AttackSpec,
    pub load_index: usize,
}

/// Searches reads in order for a pair that disagrees on some load. Every
/// attack is gain-calibrated first; candidates that cannot be calibrated
/// are skipped.
pub fn find_opposite_pair(
    eq: &Equilibrium,
    write: Target,
    read_vars: &[AttackVar],
    policy: &GainPolicy,
    cfg: &LabelerConfig,
) -> Result<Option<OppositePair>> {
    let reads = crate::attack::targets(&eq.model, read_vars);
    let n_load = eq.model.n_load();
    let mut seen: Vec<(AttackSpec, Vec<Option<Verdict>>)> = Vec::new();
    for read in reads {
        if read == write {
            continue;
        }
        let base = AttackSpec::new(read, write, 1.0, 0.0);
        let Some(k) = calibrate_gain(eq, &base, policy) else {
            continue;
        };
        let spec = base.with_gain(k);
        let mut verdicts = Vec::with_capacity(n_load);
        for load in 0..n_load {
            verdicts.push(shed_verdict(eq, &spec, load, cfg)?.0);
        }
        for (other, ov) in &seen {
            for load in 0..n_load {
                let pair = match (verdicts[load], ov[load]) {
                    (Some(Verdict::Stable), Some(Verdict::Unstable)) => {
                        Some((spec.clone(), other.clone()))
                    }
                    (Some(Verdict::Unstable), Some(Verdict::Stable)) => {
                        Some((other.clone(), spec.clone()))
                    }
                    _ => None,
                };
                if let Some((stable, unstable)) = pair {
                    return Ok(Some(OppositePair {
                        stable,
                        unstable,
                        load_index: load,
                    }));
                }
            }
        }
        seen.push((spec, verdicts));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::reference_case;
    use crate::sim::find_equilibrium;

    fn spec() -> AttackSpec {
        AttackSpec::new(
            Target {
                node: 2,
                var: AttackVar::Omega,
            },
            Target {
                node: 4,
                var: AttackVar::V,
            },
            1.0,
            0.0,
        )
    }

    #[test]
    fn calibrated_gain_sits_on_the_target_growth_rate() {
        let eq = find_equilibrium(&reference_case()).unwrap();
        let loads = LoadDemand::from_model(&eq.model);
        let policy = GainPolicy::default();
        let k = calibrate_gain(&eq, &spec(), &policy).unwrap();
        let g = |k: f64| attacked_growth_rate(&eq, &loads, &spec().with_gain(k)).unwrap();
        assert!(g(k) > policy.sigma_target);
        assert!(g(k * (1.0 - 1e-6)) <= policy.sigma_target);
        // The other sign needs at least as much gain.
        if let Some(other) = gain_for_growth(
            &eq,
            &loads,
            &spec(),
            -k.signum(),
            policy.sigma_target,
            &policy,
        ) {
            assert!(other >= k.abs());
        }
    }

    #[test]
    fn critical_gain_is_below_the_calibrated_gain() {
        let eq = find_equilibrium(&reference_case()).unwrap();
        let policy = GainPolicy::default();
        let k = calibrate_gain(&eq, &spec(), &policy).unwrap();
        let kc = critical_gain(&eq, &spec(), k.signum(), &policy).unwrap();
        assert!(kc.abs() < k.abs());
        assert_eq!(kc.signum(), k.signum());
    }

    #[test]
    fn gain_search_without_a_bracket_gives_none() {
        let eq = find_equilibrium(&reference_case()).unwrap();
        let loads = LoadDemand::from_model(&eq.model);
        let policy = GainPolicy {
            k_max: 1e-2,
            ..Default::default()
        };
        assert!(gain_for_growth(&eq, &loads, &spec(), 1.0, 0.05, &policy).is_none());
    }
}
