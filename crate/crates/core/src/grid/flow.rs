//! Branch power flows in polar form.
//!
//! All flows are oriented *into* the bus at the evaluated end, which is the
//! sign convention the bus balance rows expect.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Line,
    Transformer,
}

/// Which end of a branch the flow is evaluated at. For transformers the
/// sending end is the tap side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Sending,
    Receiving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    /// Bus indices (0-based) of the sending and receiving ends.
    pub from: usize,
    pub to: usize,
    /// Series admittance magnitude.
    pub y: f64,
    /// Series admittance angle, `atan2(x, r)`.
    pub phi: f64,
    /// Shunt susceptance at each end (half the total line charging).
    pub b_sh: f64,
    pub kind: BranchKind,
    /// Off-nominal tap ratio on the sending side; 1 for lines.
    pub m: f64,
}

impl BranchParams {
    /// Builds a branch from series impedance `r + jx`.
    pub fn from_impedance(
        from: usize,
        to: usize,
        r: f64,
        x: f64,
        b_total: f64,
        tap: Option<f64>,
    ) -> Self {
        let (y, phi) = admittance_polar(r, x);
        let (kind, m) = match tap {
            Some(m) => (BranchKind::Transformer, m),
            None => (BranchKind::Line, 1.0),
        };
        BranchParams {
            from,
            to,
            y,
            phi,
            b_sh: 0.5 * b_total,
            kind,
            m,
        }
    }
}

/// `Y = 1/|r + jx|`, `phi = atan2(x, r)`.
pub fn admittance_polar(r: f64, x: f64) -> (f64, f64) {
    (1.0 / r.hypot(x), x.atan2(r))
}

/// Active and reactive power flowing into bus `i` from the branch, where
/// `(v_i, theta_i)` is the evaluated end and `(v_k, theta_k)` the far end.
pub fn branch_flow(
    v_i: f64,
    theta_i: f64,
    v_k: f64,
    theta_k: f64,
    branch: &BranchParams,
    side: Side,
) -> (f64, f64) {
    let a = branch.phi + theta_i - theta_k;
    let (sin_a, cos_a) = a.sin_cos();
    let (sin_phi, cos_phi) = branch.phi.sin_cos();
    let y = branch.y;
    match (branch.kind, side) {
        (BranchKind::Line, _) => {
            let p = y * v_i * (v_k * cos_a - v_i * cos_phi);
            let q = y * v_i * (v_k * sin_a - v_i * sin_phi) + branch.b_sh * v_i * v_i;
            (p, q)
        }
        (BranchKind::Transformer, Side::Sending) => {
            let vi_m = v_i / branch.m;
            let p = y * vi_m * (v_k * cos_a - vi_m * cos_phi);
            let q = y * vi_m * (v_k * sin_a - vi_m * sin_phi) + branch.b_sh * v_i * v_i;
            (p, q)
        }
        (BranchKind::Transformer, Side::Receiving) => {
            let vk_m = v_k / branch.m;
            let p = y * v_i * (vk_m * cos_a - v_i * cos_phi);
            let q = y * v_i * (vk_m * sin_a - v_i * sin_phi);
            (p, q)
        }
    }
}
