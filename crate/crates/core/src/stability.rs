//! Small-signal analysis: linearization of the DAE around an operating
//! point, with algebraic states eliminated, and the resulting modal growth
//! rates. Used to bracket attack gains before confirming them in the time
//! domain.

use crate::attack::{ArmedAttack, AttackSpec};
use crate::error::{Error, Result};
use crate::grid::LoadDemand;
use crate::sim::{jacobian_central, DaeSystem, Equilibrium, GridDae};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// State matrix of the reduced system `dx = (Fx - Fy Gy^-1 Gx) x`.
pub fn reduced_state_matrix(sys: &dyn DaeSystem, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let nd = sys.n_differential();
    let na = n - nd;
    let j = jacobian_central(sys, x, t);
    let fx = j.view((0, 0), (nd, nd));
    let fy = j.view((0, nd), (nd, na));
    let gx = j.view((nd, 0), (na, nd));
    let gy = j.view((nd, nd), (na, na)).into_owned();
    let gy_inv_gx = gy
        .lu()
        .solve(&gx.into_owned())
        .ok_or_else(|| Error::Infeasible("singular algebraic Jacobian".into()))?;
    Ok(fx - fy * gy_inv_gx)
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    a.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over all modes.
pub fn max_growth_rate(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Growth rate of the equilibrium with `spec` closed around it (the probe
/// offset does not affect the linearization).
pub fn attacked_growth_rate(
    eq: &Equilibrium,
    loads: &LoadDemand,
    spec: &AttackSpec,
) -> Result<f64> {
    let x = &eq.state.values;
    let mut armed = ArmedAttack::new(&eq.model, spec)?;
    armed.arm(&eq.model, x, loads);
    let dae = GridDae {
        model: &eq.model,
        loads,
        attack: Some(&armed),
    };
    let a = reduced_state_matrix(&dae, x, spec.t_on.max(0.0))?;
    Ok(max_growth_rate(&a))
}
