//! Newton power flow on the polar bus balance equations.

use crate::error::{Error, Result};
use crate::grid::{BusKind, GridModel, LoadDemand};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tol: 1e-12,
            max_iters: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net generation at each bus (zero where no machine is attached).
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub iterations: usize,
}

/// Solves for bus voltages with machine buses held at their voltage
/// setpoints, non-slack machines at their active power setpoints, and the
/// slack angle fixed at zero.
pub fn solve(
    model: &GridModel,
    loads: &LoadDemand,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    let n = model.n_bus();
    let mut v = vec![1.0; n];
    let mut theta = vec![0.0; n];
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for g in &model.generators {
        v[g.machine.bus] = g.machine.v_set;
        p_spec[g.machine.bus] += g.machine.p_set;
    }
    for (l, load) in model.loads.iter().enumerate() {
        p_spec[load.bus] -= loads.p[l];
        q_spec[load.bus] -= loads.q[l];
    }

    // Unknowns: theta at every non-slack bus, V at every bus whose voltage
    // is not regulated.
    let regulated: Vec<bool> = (0..n)
        .map(|b| b == model.slack || model.generator_at(b).is_some())
        .collect();
    for (b, bus) in model.buses.iter().enumerate() {
        if bus.kind != BusKind::Pq && !regulated[b] {
            log::debug!(
                "bus {} is typed PV but has no machine; treating as PQ",
                bus.id
            );
        }
    }
    let theta_idx: Vec<usize> = (0..n).filter(|&b| b != model.slack).collect();
    let v_idx: Vec<usize> = (0..n).filter(|&b| !regulated[b]).collect();
    let dim = theta_idx.len() + v_idx.len();

    let mismatch = |v: &[f64], theta: &[f64]| -> DVector<f64> {
        let mut f = DVector::zeros(dim);
        for (r, &b) in theta_idx.iter().enumerate() {
            let (p, _) = model.network_injection(b, v, theta);
            f[r] = p + p_spec[b];
        }
        for (r, &b) in v_idx.iter().enumerate() {
            let (_, q) = model.network_injection(b, v, theta);
            f[theta_idx.len() + r] = q + q_spec[b];
        }
        f
    };

    let mut iterations = 0;
    loop {
        let f = mismatch(&v, &theta);
        let worst = f.amax();
        if worst < opts.tol {
            break;
        }
        if iterations >= opts.max_iters || !worst.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iters: iterations,
                mismatch: worst,
            });
        }
        let mut jac = DMatrix::zeros(dim, dim);
        let h = 1e-7;
        for c in 0..dim {
            let (mut v2, mut t2) = (v.clone(), theta.clone());
            if c < theta_idx.len() {
                t2[theta_idx[c]] += h;
            } else {
                v2[v_idx[c - theta_idx.len()]] += h;
            }
            let fc = mismatch(&v2, &t2);
            jac.set_column(c, &((fc - &f) / h));
        }
        let dx = jac.lu().solve(&(-f)).ok_or(Error::PowerFlowDiverged {
            iters: iterations,
            mismatch: worst,
        })?;
        for (c, &b) in theta_idx.iter().enumerate() {
            theta[b] += dx[c];
        }
        for (c, &b) in v_idx.iter().enumerate() {
            v[b] += dx[theta_idx.len() + c];
        }
        iterations += 1;
    }

    let mut p_gen = vec![0.0; n];
    let mut q_gen = vec![0.0; n];
    for g in &model.generators {
        let b = g.machine.bus;
        let (p, q) = model.network_injection(b, &v, &theta);
        // Generation = load - inflow from the network.
        p_gen[b] = -(p + p_spec[b]) + g.machine.p_set;
        q_gen[b] = -(q + q_spec[b]);
    }
    if model.generator_at(model.slack).is_none() {
        return Err(Error::Model("slack bus has no machine".into()));
    }
    Ok(PowerFlowSolution {
        v,
        theta,
        p_gen,
        q_gen,
        iterations,
    })
}
