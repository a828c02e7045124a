//! Implicit trapezoidal integration of a semi-explicit index-1 DAE
//!
//! ```text
//! x' = f(x, y, t)
//! 0  = g(x, y, t)
//! ```
//!
//! with the differential rows first. Each step solves the trapezoidal
//! update and the algebraic constraints together by Newton iteration. The
//! Jacobian is a forward-difference approximation that is kept and reused
//! across steps until convergence slows down.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, LU};

/// A semi-explicit DAE. `eval` writes differential right-hand sides into
/// the first `n_differential()` rows and algebraic residuals into the rest.
pub trait DaeSystem {
    fn dim(&self) -> usize;
    fn n_differential(&self) -> usize;
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iters: 20,
        }
    }
}

/// Forward-difference Jacobian of `sys.eval` at `(x, t)`.
pub fn jacobian<S: DaeSystem + ?Sized>(sys: &S, x: &[f64], t: f64, f0: &[f64]) -> DMatrix<f64> {
    let n = sys.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    for j in 0..n {
        let h = 1e-7 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        sys.eval(&xp, t, &mut fp);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - f0[i]) / h;
        }
        xp[j] = x[j];
    }
    jac
}

/// Central-difference Jacobian, for linearization where accuracy matters
/// more than cost.
pub fn jacobian_central<S: DaeSystem + ?Sized>(sys: &S, x: &[f64], t: f64) -> DMatrix<f64> {
    let n = sys.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        sys.eval(&xp, t, &mut fp);
        xp[j] = x[j] - h;
        sys.eval(&xp, t, &mut fm);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        xp[j] = x[j];
    }
    jac
}

pub struct Trapezoid {
    opts: NewtonOptions,
    lu: Option<(LU<f64, nalgebra::Dyn, nalgebra::Dyn>, f64)>,
    pub jacobian_evals: usize,
}

impl Trapezoid {
    pub fn new(opts: NewtonOptions) -> Self {
        Trapezoid {
            opts,
            lu: None,
            jacobian_evals: 0,
        }
    }

    pub fn options(&self) -> &NewtonOptions {
        &self.opts
    }

    /// Drops the cached iteration matrix, e.g. after a discontinuity.
    pub fn invalidate(&mut self) {
        self.lu = None;
    }

    fn factor<S: DaeSystem + ?Sized>(&mut self, sys: &S, z: &[f64], t: f64, dt: f64) -> Result<()> {
        let n = sys.dim();
        let nd = sys.n_differential();
        let mut f0 = vec![0.0; n];
        sys.eval(z, t, &mut f0);
        let mut m = jacobian(sys, z, t, &f0);
        self.jacobian_evals += 1;
        for i in 0..nd {
            for j in 0..n {
                m[(i, j)] *= -0.5 * dt;
            }
            m[(i, i)] += 1.0;
        }
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(Error::NewtonFailed {
                t,
                iters: 0,
                residual: f64::INFINITY,
            });
        }
        self.lu = Some((lu, dt));
        Ok(())
    }

    /// Advances `x` from `t` to `t + dt`.
    pub fn step<S: DaeSystem + ?Sized>(
        &mut self,
        sys: &S,
        x: &[f64],
        t: f64,
        dt: f64,
    ) -> Result<Vec<f64>> {
        let n = sys.dim();
        let nd = sys.n_differential();
        let t1 = t + dt;
        let mut f_old = vec![0.0; n];
        sys.eval(x, t, &mut f_old);
        // Constant part of the differential rows.
        let c: Vec<f64> = (0..nd).map(|i| x[i] + 0.5 * dt * f_old[i]).collect();

        let mut z = x.to_vec();
        let mut f = vec![0.0; n];
        let mut r = DVector::zeros(n);
        let mut fresh = false;
        if self.lu.as_ref().is_none_or(|(_, h)| *h != dt) {
            self.factor(sys, &z, t1, dt)?;
            fresh = true;
        }
        let mut prev_norm = f64::INFINITY;
        let mut since_refresh = 0;
        for iter in 0..self.opts.max_iters {
            sys.eval(&z, t1, &mut f);
            for i in 0..nd {
                r[i] = z[i] - c[i] - 0.5 * dt * f[i];
            }
            for i in nd..n {
                r[i] = f[i];
            }
            let norm = r.amax();
            if !norm.is_finite() {
                break;
            }
            if norm < self.opts.tol && iter > 0 || norm < 1e-3 * self.opts.tol {
                return Ok(z);
            }
            // Slow contraction with a stale matrix: refresh it here.
            if !fresh && since_refresh > 0 && norm > 0.25 * prev_norm {
                self.factor(sys, &z, t1, dt)?;
                fresh = true;
                since_refresh = 0;
            }
            let (lu, _) = self.lu.as_ref().expect("factored above");
            let dz = lu.solve(&r).ok_or(Error::NewtonFailed {
                t: t1,
                iters: iter,
                residual: norm,
            })?;
            let step_norm = dz.amax();
            for i in 0..n {
                z[i] -= dz[i];
            }
            since_refresh += 1;
            prev_norm = norm;
            if step_norm < self.opts.tol && norm < 1e2 * self.opts.tol {
                return Ok(z);
            }
        }
        // One retry from scratch with a fresh Jacobian at the start point.
        if !fresh {
            self.lu = None;
            return self.step(sys, x, t, dt);
        }
        sys.eval(&z, t1, &mut f);
        Err(Error::NewtonFailed {
            t: t1,
            iters: self.opts.max_iters,
            residual: f.iter().skip(nd).fold(0.0f64, |a, v| a.max(v.abs())),
        })
    }
}

/// Re-solves the algebraic variables with the differential states frozen.
pub fn solve_algebraic<S: DaeSystem + ?Sized>(
    sys: &S,
    x: &mut [f64],
    t: f64,
    opts: &NewtonOptions,
) -> Result<()> {
    let n = sys.dim();
    let nd = sys.n_differential();
    let na = n - nd;
    let mut f = vec![0.0; n];
    for iter in 0..opts.max_iters {
        sys.eval(x, t, &mut f);
        let norm = f[nd..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !norm.is_finite() {
            break;
        }
        if norm < opts.tol {
            return Ok(());
        }
        let full = jacobian(sys, x, t, &f);
        let gy = full.view((nd, nd), (na, na)).into_owned();
        let rhs = DVector::from_iterator(na, f[nd..].iter().copied());
        let dy = gy.lu().solve(&rhs).ok_or(Error::NewtonFailed {
            t,
            iters: iter,
            residual: norm,
        })?;
        for i in 0..na {
            x[nd + i] -= dy[i];
        }
    }
    sys.eval(x, t, &mut f);
    Err(Error::NewtonFailed {
        t,
        iters: opts.max_iters,
        residual: f[nd..].iter().fold(0.0f64, |a, v| a.max(v.abs())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl DaeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn n_differential(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
            out[0] = -x[0];
        }
    }

    // x' = -x, 0 = y - x^2
    struct WithConstraint;
    impl DaeSystem for WithConstraint {
        fn dim(&self) -> usize {
            2
        }
        fn n_differential(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
            out[0] = -x[0];
            out[1] = x[1] - x[0] * x[0];
        }
    }

    #[test]
    fn trapezoid_matches_closed_form() {
        let dt = 0.01;
        let mut tr = Trapezoid::new(NewtonOptions {
            tol: 1e-15,
            max_iters: 10,
        });
        let x1 = tr.step(&Decay, &[1.0], 0.0, dt).unwrap();
        let exact = (1.0 - dt / 2.0) / (1.0 + dt / 2.0);
        assert!((x1[0] - exact).abs() < 1e-14, "{}", x1[0] - exact);
    }

    #[test]
    fn algebraic_rows_are_consistent_after_step() {
        let mut tr = Trapezoid::new(NewtonOptions::default());
        let mut x = vec![2.0, 4.0];
        for k in 0..100 {
            x = tr.step(&WithConstraint, &x, k as f64 * 0.01, 0.01).unwrap();
        }
        assert!((x[1] - x[0] * x[0]).abs() < 1e-10);
    }

    #[test]
    fn algebraic_resolve() {
        let mut x = vec![3.0, 0.0];
        solve_algebraic(&WithConstraint, &mut x, 0.0, &NewtonOptions::default()).unwrap();
        assert!((x[1] - 9.0).abs() < 1e-10);
        assert_eq!(x[0], 3.0);
    }
}
