use super::*;
use crate::attack::{AttackVar, Target};
use crate::grid::reference_case;

fn reference_eq() -> Equilibrium {
    find_equilibrium(&reference_case()).unwrap()
}

fn max_abs_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    a.samples
        .iter()
        .zip(&b.samples)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn attack(k: f64) -> AttackSpec {
    AttackSpec::new(
        Target {
            node: 3,
            var: AttackVar::Omega,
        },
        Target {
            node: 9,
            var: AttackVar::Theta,
        },
        k,
        0.0,
    )
}

#[test]
fn one_step_from_equilibrium_is_a_fixed_point() {
    let eq = reference_eq();
    let loads = LoadDemand::from_model(&eq.model);
    let dae = GridDae {
        model: &eq.model,
        loads: &loads,
        attack: None,
    };
    let mut tr = Trapezoid::new(NewtonOptions::default());
    let x1 = tr.step(&dae, &eq.state.values, 0.0, 0.01).unwrap();
    let drift = x1
        .iter()
        .zip(&eq.state.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(drift < 1e-10, "{drift}");
}

#[test]
fn identical_configs_give_identical_trajectories() {
    let eq = reference_eq();
    let mut cfg = ScenarioConfig::attack_then_shed(attack(2.0), 4);
    cfg.t_end = 15.0;
    let a = simulate_from(&eq, &cfg).unwrap();
    let b = simulate_from(&eq, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tiny_gain_is_indistinguishable_from_no_attack() {
    let eq = reference_eq();
    let base = ScenarioConfig {
        t_end: 20.0,
        ..Default::default()
    };
    let with = ScenarioConfig {
        attack: Some(attack(1e-12)),
        ..base.clone()
    };
    let a = simulate_from(&eq, &base).unwrap();
    let b = simulate_from(&eq, &with).unwrap();
    assert!(max_abs_diff(&a, &b) < 1e-9);
}

#[test]
fn shed_zeroes_the_bus_six_load() {
    let eq = reference_eq();
    let model = &eq.model;
    let bus6 = model.bus_index(6).unwrap();
    let load = model.load_at(bus6).unwrap();
    let cfg = ScenarioConfig {
        t_end: 5.0,
        shed: Some(ShedEvent {
            t: 2.0,
            load_index: load,
        }),
        ..Default::default()
    };
    let mut sim = Simulator::new(&eq, &cfg).unwrap();
    sim.advance_to(cfg.t_end);
    assert_eq!(sim.loads().p[load], 0.0);
    assert_eq!(sim.loads().q[load], 0.0);
    let traj = sim.into_trajectory();
    let k = traj
        .times
        .iter()
        .position(|&t| (t - 2.0).abs() < 1e-9)
        .unwrap();
    // The sample at the shed time already shows the post-shed demand.
    assert_eq!(traj.channel("PL_6").unwrap()[k], 0.0);
    assert_eq!(traj.channel("QL_6").unwrap()[k], 0.0);
    assert!(traj.channel("PL_6").unwrap()[k - 1] > 0.0);
    assert_eq!(traj.events, vec![Event::new("shed", 2.0, Some(load))]);
}

#[test]
fn sample_at_shed_is_consistent() {
    let eq = reference_eq();
    let cfg = ScenarioConfig {
        t_end: 3.0,
        shed: Some(ShedEvent {
            t: 1.0,
            load_index: 1,
        }),
        ..Default::default()
    };
    let mut sim = Simulator::new(&eq, &cfg).unwrap();
    sim.advance_to(1.0);
    let mut r = vec![0.0; sim.state().len()];
    crate::grid::residuals(sim.model(), sim.state(), sim.loads(), &mut r).unwrap();
    let nd = sim.model().layout().n_differential();
    let alg = r[nd..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(alg < 1e-9, "{alg}");
}

#[test]
fn shedding_a_zero_load_changes_nothing() {
    let mut model = reference_case();
    model.loads[3].p = 0.0;
    model.loads[3].q = 0.0;
    let eq = find_equilibrium(&model).unwrap();
    let plain = ScenarioConfig {
        t_end: 10.0,
        attack: Some(attack(1.0)),
        ..Default::default()
    };
    let shed = ScenarioConfig {
        shed: Some(ShedEvent {
            t: 4.0,
            load_index: 3,
        }),
        ..plain.clone()
    };
    let a = simulate_from(&eq, &plain).unwrap();
    let mut b = simulate_from(&eq, &shed).unwrap();
    assert_eq!(b.events.iter().filter(|e| e.name == "shed").count(), 1);
    b.events.retain(|e| e.name != "shed");
    assert_eq!(a, b);
}

#[test]
fn unknown_load_is_rejected() {
    let eq = reference_eq();
    let cfg = ScenarioConfig {
        shed: Some(ShedEvent {
            t: 1.0,
            load_index: 99,
        }),
        ..Default::default()
    };
    assert!(matches!(
        Simulator::new(&eq, &cfg),
        Err(Error::UnknownLoad(99))
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad_rate = ScenarioConfig {
        dt: 0.03,
        ..Default::default()
    };
    assert!(bad_rate.validate().is_err());
    let late_shed = ScenarioConfig {
        t_end: 5.0,
        shed: Some(ShedEvent {
            t: 5.0,
            load_index: 0,
        }),
        ..Default::default()
    };
    assert!(late_shed.validate().is_err());
}

#[test]
fn halving_the_step_quarters_the_error() {
    let eq = reference_eq();
    let at = |dt: f64| -> Vec<f64> {
        let cfg = ScenarioConfig {
            t_end: 10.0 + dt,
            dt,
            newton_tol: 1e-13,
            shed: Some(ShedEvent {
                t: 1.0,
                load_index: 2,
            }),
            ..Default::default()
        };
        let traj = simulate_from(&eq, &cfg).unwrap();
        let k = traj
            .times
            .iter()
            .position(|&t| (t - 10.0).abs() < 1e-9)
            .unwrap();
        traj.samples.iter().map(|c| c[k]).collect()
    };
    let dt = 0.01;
    let reference = at(dt / 16.0);
    let err = |x: &[f64]| {
        x.iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let e1 = err(&at(dt));
    let e2 = err(&at(dt / 2.0));
    let ratio = e1 / e2;
    assert!(
        (ratio - 4.0).abs() <= 1.0,
        "ratio {ratio} ({e1:e} / {e2:e})"
    );
}
