use crate::error::{Error, Result};
use crate::grid::{
    residuals, GridModel, LoadDemand, SystemState, DELTA, EDP, EQP, OMEGA, VF, VM, VR1, VR2,
};
use crate::powerflow::{self, PowerFlowOptions, PowerFlowSolution};
use num_complex::Complex64;
use std::f64::consts::FRAC_PI_2;

/// A steady operating point together with the model whose mechanical
/// torques and voltage references hold it there.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub model: GridModel,
    pub state: SystemState,
    pub power_flow: PowerFlowSolution,
}

/// Solves the power flow, then back-solves every machine and exciter so
/// that all differential right-hand sides vanish.
pub fn find_equilibrium(model: &GridModel) -> Result<Equilibrium> {
    find_equilibrium_with(
        model,
        &LoadDemand::from_model(model),
        &PowerFlowOptions::default(),
    )
}

pub fn find_equilibrium_with(
    model: &GridModel,
    loads: &LoadDemand,
    pf_opts: &PowerFlowOptions,
) -> Result<Equilibrium> {
    let pf = powerflow::solve(model, loads, pf_opts)?;
    let lay = model.layout();
    let mut x = vec![0.0; lay.len()];
    for b in 0..model.n_bus() {
        x[lay.v(b)] = pf.v[b];
        x[lay.theta(b)] = pf.theta[b];
    }

    let mut tau_m = Vec::with_capacity(model.n_gen());
    let mut v_ref = Vec::with_capacity(model.n_gen());
    for (k, gen) in model.generators.iter().enumerate() {
        let m = &gen.machine;
        let a = &gen.avr;
        let b = m.bus;
        let vph = Complex64::from_polar(pf.v[b], pf.theta[b]);
        let s = Complex64::new(pf.p_gen[b], pf.q_gen[b]);
        let i = (s / vph).conj();
        let e = vph + Complex64::new(m.r_a, m.x_q) * i;
        let delta = e.arg();
        let idq = i * Complex64::from_polar(1.0, FRAC_PI_2 - delta);
        let (i_d, i_q) = (idq.re, idq.im);
        let v_d = pf.v[b] * (delta - pf.theta[b]).sin();
        let v_q = pf.v[b] * (delta - pf.theta[b]).cos();

        let edp = (m.x_q - m.x_q_p) * i_q;
        let eqp = v_q + m.r_a * i_q + m.x_d_p * i_d;
        let vf = eqp + (m.x_d - m.x_d_p) * i_d;
        let tau_e = (m.r_a * i_q + v_q) * i_q + (m.r_a * i_d + v_d) * i_d;
        let vr = a.exciter(vf);
        if !(vr > a.v_r_min && vr < a.v_r_max) {
            return Err(Error::Infeasible(format!(
                "exciter at bus {} needs v_r = {vr:.4}, outside [{}, {}]",
                model.buses[b].id, a.v_r_min, a.v_r_max
            )));
        }
        let vr2 = -(a.k_f / a.t_f) * vf;

        let base = lay.machine(k, 0);
        x[base + DELTA] = delta;
        x[base + OMEGA] = m.omega_s;
        x[base + EQP] = eqp;
        x[base + EDP] = edp;
        x[base + VM] = pf.v[b];
        x[base + VR1] = vr;
        x[base + VR2] = vr2;
        x[base + VF] = vf;
        x[lay.i_d(k)] = i_d;
        x[lay.i_q(k)] = i_q;
        tau_m.push(tau_e);
        v_ref.push(pf.v[b] + vr / a.k_a);
    }

    let model = model.with_setpoints(&tau_m, &v_ref);
    let mut r = vec![0.0; x.len()];
    residuals(&model, &x, loads, &mut r)?;
    let worst = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(worst < 1e-8) {
        return Err(Error::Infeasible(format!(
            "equilibrium residual {worst:.3e} after initialization"
        )));
    }
    Ok(Equilibrium {
        model,
        state: SystemState { values: x },
        power_flow: pf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{load_case, reference_case};

    #[test]
    fn reference_equilibrium_has_zero_residual() {
        let m = reference_case();
        let eq = find_equilibrium(&m).unwrap();
        let mut r = vec![0.0; eq.state.values.len()];
        residuals(
            &eq.model,
            &eq.state.values,
            &LoadDemand::from_model(&m),
            &mut r,
        )
        .unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn omega_perturbation_enters_delta_row() {
        let m = reference_case();
        let eq = find_equilibrium(&m).unwrap();
        let lay = eq.model.layout();
        let mut x = eq.state.values.clone();
        let k = 2;
        x[lay.machine(k, OMEGA)] += 0.01;
        let mut r = vec![0.0; x.len()];
        residuals(&eq.model, &x, &LoadDemand::from_model(&m), &mut r).unwrap();
        let expected = eq.model.generators[k].machine.omega_b * 0.01;
        assert!((r[lay.machine(k, DELTA)] - expected).abs() < 1e-9);
    }

    #[test]
    fn no_load_single_machine_is_flat() {
        let text = "
BUS
1 3 0 0
2 1 0 0
BRANCH
1 2 0.01 0.1 0 0
GEN
1 0 1.02 0 1.2 0.3 1.1 0.5 6 0.5 4 2
AVR
1 20 0.02 1 0.2 0.06 0.35 0.0006 0.9 0.02 -6 6
LOAD
2 0 0
";
        let m = load_case(text).unwrap();
        let eq = find_equilibrium(&m).unwrap();
        let lay = m.layout();
        let x = &eq.state.values;
        for b in 0..2 {
            assert!((x[lay.v(b)] - 1.02).abs() < 1e-12);
            assert!(x[lay.theta(b)].abs() < 1e-12);
        }
        assert!(x[lay.machine(0, DELTA)].abs() < 1e-12);
        let out = crate::grid::machine_outputs(&eq.model, x, 0);
        assert!(out.p_g.abs() < 1e-12);
    }
}
