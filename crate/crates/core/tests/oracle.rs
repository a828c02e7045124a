mod common;

use common::C;
use gridshed::grid::{machine_outputs, reference_case, residuals, LoadDemand};
use gridshed::sim::{find_equilibrium, ScenarioConfig, Simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn equilibrium_matches_independent_power_flow() {
    let model = reference_case();
    let eq = find_equilibrium(&model).unwrap();
    let (pl, ql) = common::base_loads();
    let pf = common::power_flow(&pl, &ql);
    let lay = eq.model.layout();
    for id in 1..=common::N {
        let b = eq.model.bus_index(id).unwrap();
        let v = eq.state.values[lay.v(b)];
        let th = eq.state.values[lay.theta(b)];
        assert!(
            (v - pf.v[id - 1]).abs() < 1e-6,
            "V_{id}: {v} vs {}",
            pf.v[id - 1]
        );
        assert!(
            (th - pf.theta[id - 1]).abs() < 1e-6,
            "theta_{id}: {th} vs {}",
            pf.theta[id - 1]
        );
    }
}

#[test]
fn bus_balance_rows_match_complex_phasor_form() {
    let model = reference_case();
    let lay = model.layout();
    let loads = LoadDemand::from_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut r = vec![0.0; lay.len()];
    for _ in 0..20 {
        let x: Vec<f64> = (0..lay.len())
            .map(|_| rng.random_range(-0.5..1.5))
            .collect();
        let mut x = x;
        for b in 0..model.n_bus() {
            x[lay.v(b)] = rng.random_range(0.8..1.2);
            x[lay.theta(b)] = rng.random_range(-0.6..0.6);
        }
        residuals(&model, &x, &loads, &mut r).unwrap();

        let y = common::ybus();
        let v: Vec<C> = (1..=common::N)
            .map(|id| {
                let b = model.bus_index(id).unwrap();
                C::from_polar(x[lay.v(b)], x[lay.theta(b)])
            })
            .collect();
        let s = common::injections(&y, &v);
        let mut expected: Vec<C> = s.iter().map(|z| -z).collect();
        for (l, &(id, _, _)) in common::LOADS.iter().enumerate() {
            expected[id - 1] -= C::new(loads.p[l], loads.q[l]);
        }
        for k in 0..model.n_gen() {
            let bus = model.generators[k].machine.bus;
            let id = model.buses[bus].id;
            let o = machine_outputs(&model, &x, k);
            // Stator current as a network phasor.
            let delta = x[lay.machine(k, 0)];
            let rot = C::from_polar(1.0, delta - std::f64::consts::FRAC_PI_2);
            let i = C::new(x[lay.i_d(k)], x[lay.i_q(k)]) * rot;
            let sg = v[id - 1] * i.conj();
            assert!((sg.re - o.p_g).abs() < 1e-10);
            assert!((sg.im - o.q_g).abs() < 1e-10);
            expected[id - 1] += sg;
        }
        for id in 1..=common::N {
            let b = model.bus_index(id).unwrap();
            let e = expected[id - 1];
            assert!((r[lay.p_row(b)] - e.re).abs() < 1e-10, "P row {id}");
            assert!((r[lay.q_row(b)] - e.im).abs() < 1e-10, "Q row {id}");
        }
    }
}

#[test]
fn load_step_settles_to_independent_steady_state() {
    let model = reference_case();
    let eq = find_equilibrium(&model).unwrap();
    let (pl, ql) = common::base_loads();
    let pf = common::power_flow(&pl, &ql);
    let sp = common::setpoints(&pf);

    let step_id = 14;
    let oracle_load = common::LOADS.iter().position(|l| l.0 == step_id).unwrap();
    let (mut pl2, ql2) = (pl.clone(), ql.clone());
    pl2[oracle_load] += 0.01;
    let ss = common::steady_state(&sp, &pl2, &ql2, &pf);

    let cfg = ScenarioConfig {
        t_end: 120.0,
        newton_tol: 1e-12,
        ..Default::default()
    };
    let mut sim = Simulator::new(&eq, &cfg).unwrap();
    let load = eq
        .model
        .load_at(eq.model.bus_index(step_id).unwrap())
        .unwrap();
    sim.advance_to(1.0);
    let q = sim.loads().q[load];
    sim.set_demand(load, pl2[oracle_load], q).unwrap();
    sim.advance_to(cfg.t_end);
    assert!(!sim.is_terminated());

    let x = sim.state();
    let lay = eq.model.layout();
    let ref_theta = x[lay.theta(eq.model.bus_index(1).unwrap())];
    for id in 1..=common::N {
        let b = eq.model.bus_index(id).unwrap();
        let v = x[lay.v(b)];
        let th = x[lay.theta(b)] - ref_theta;
        assert!(
            (v - ss.v[id - 1]).abs() < 1e-6,
            "V_{id}: {v} vs {}",
            ss.v[id - 1]
        );
        assert!(
            (th - ss.theta[id - 1]).abs() < 1e-6,
            "theta_{id}: {th} vs {}",
            ss.theta[id - 1]
        );
    }
    for k in 0..eq.model.n_gen() {
        let w = x[lay.machine(k, 1)];
        assert!((w - ss.omega).abs() < 1e-6, "omega {w} vs {}", ss.omega);
    }
    // Frequency falls when demand rises.
    assert!(ss.omega < 1.0);
}
