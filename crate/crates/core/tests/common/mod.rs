//! Independent oracles for integration tests: a complex Y-bus power flow
//! for the IEEE 14-bus case and a steady-state solver that includes the
//! machine and exciter phasor relations. None of this uses the library's
//! network code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C;

pub const N: usize = 14;

// from, to, r, x, b_total, tap (0 for lines); buses 1-based.
pub const BRANCHES: [(usize, usize, f64, f64, f64, f64); 20] = [
    (1, 2, 0.01938, 0.05917, 0.0528, 0.0),
    (1, 5, 0.05403, 0.22304, 0.0492, 0.0),
    (2, 3, 0.04699, 0.19797, 0.0438, 0.0),
    (2, 4, 0.05811, 0.17632, 0.0340, 0.0),
    (2, 5, 0.05695, 0.17388, 0.0346, 0.0),
    (3, 4, 0.06701, 0.17103, 0.0128, 0.0),
    (4, 5, 0.01335, 0.04211, 0.0, 0.0),
    (4, 7, 0.0, 0.20912, 0.0, 0.978),
    (4, 9, 0.0, 0.55618, 0.0, 0.969),
    (5, 6, 0.0, 0.25202, 0.0, 0.932),
    (6, 11, 0.09498, 0.19890, 0.0, 0.0),
    (6, 12, 0.12291, 0.25581, 0.0, 0.0),
    (6, 13, 0.06615, 0.13027, 0.0, 0.0),
    (7, 8, 0.0, 0.17615, 0.0, 0.0),
    (7, 9, 0.0, 0.11001, 0.0, 0.0),
    (9, 10, 0.03181, 0.08450, 0.0, 0.0),
    (9, 14, 0.12711, 0.27038, 0.0, 0.0),
    (10, 11, 0.08205, 0.19207, 0.0, 0.0),
    (12, 13, 0.22092, 0.19988, 0.0, 0.0),
    (13, 14, 0.17093, 0.34802, 0.0, 0.0),
];

pub const SHUNT_B: [(usize, f64); 1] = [(9, 0.19)];

// bus, p_set, v_set
pub const GENS: [(usize, f64, f64); 5] = [
    (1, 2.324, 1.06),
    (2, 0.40, 1.045),
    (3, 0.0, 1.01),
    (6, 0.0, 1.07),
    (8, 0.0, 1.09),
];

// r_a, x_d, x_d', x_q, D per generator, same order as GENS.
pub const MACHINES: [(f64, f64, f64, f64, f64); 5] = [
    (0.0, 0.8979, 0.2995, 0.646, 20.0),
    (0.0031, 1.05, 0.185, 0.98, 15.0),
    (0.0031, 1.05, 0.185, 0.98, 2.0),
    (0.0014, 1.25, 0.232, 1.22, 2.0),
    (0.0014, 1.25, 0.232, 1.22, 2.0),
];

// K_a, K_e, A_e, B_e (identical for every unit)
pub const EXCITER: (f64, f64, f64, f64) = (20.0, 1.0, 0.0006, 0.9);

// bus, PL, QL
pub const LOADS: [(usize, f64, f64); 11] = [
    (2, 0.217, 0.127),
    (3, 0.942, 0.190),
    (4, 0.478, -0.039),
    (5, 0.076, 0.016),
    (6, 0.112, 0.075),
    (9, 0.295, 0.166),
    (10, 0.090, 0.058),
    (11, 0.035, 0.018),
    (12, 0.061, 0.016),
    (13, 0.135, 0.058),
    (14, 0.149, 0.050),
];

pub fn ybus() -> Vec<Vec<C>> {
    let mut y = vec![vec![C::new(0.0, 0.0); N]; N];
    for &(f, t, r, x, b, tap) in &BRANCHES {
        let (f, t) = (f - 1, t - 1);
        let ys = C::new(1.0, 0.0) / C::new(r, x);
        let m = if tap == 0.0 { 1.0 } else { tap };
        let half = C::new(0.0, b / 2.0);
        y[f][f] += ys / (m * m) + half;
        y[t][t] += ys + half;
        y[f][t] -= ys / m;
        y[t][f] -= ys / m;
    }
    for &(bus, b) in &SHUNT_B {
        y[bus - 1][bus - 1] += C::new(0.0, b);
    }
    y
}

/// Complex power injected into the network at every bus.
pub fn injections(y: &[Vec<C>], v: &[C]) -> Vec<C> {
    (0..N)
        .map(|i| {
            let cur: C = (0..N).map(|k| y[i][k] * v[k]).sum();
            v[i] * cur.conj()
        })
        .collect()
}

pub fn newton(f: impl Fn(&[f64]) -> Vec<f64>, mut x: Vec<f64>, tol: f64) -> Vec<f64> {
    let n = x.len();
    for _ in 0..50 {
        let r = f(&x);
        let norm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm < tol {
            return x;
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let rp = f(&xp);
            for i in 0..n {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let dx = jac
            .lu()
            .solve(&DVector::from_vec(r))
            .expect("singular oracle Jacobian");
        for i in 0..n {
            x[i] -= dx[i];
        }
    }
    panic!("oracle Newton did not converge");
}

fn load_vectors(pl: &[f64], ql: &[f64]) -> Vec<C> {
    let mut s = vec![C::new(0.0, 0.0); N];
    for (l, &(bus, _, _)) in LOADS.iter().enumerate() {
        s[bus - 1] += C::new(pl[l], ql[l]);
    }
    s
}

pub fn base_loads() -> (Vec<f64>, Vec<f64>) {
    (
        LOADS.iter().map(|l| l.1).collect(),
        LOADS.iter().map(|l| l.2).collect(),
    )
}

pub struct PowerFlow {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Complex generation per machine, in GENS order.
    pub s_gen: Vec<C>,
}

/// Textbook power flow: bus 1 slack at angle 0, machine buses PV.
pub fn power_flow(pl: &[f64], ql: &[f64]) -> PowerFlow {
    let y = ybus();
    let load = load_vectors(pl, ql);
    let gen_bus: Vec<usize> = GENS.iter().map(|g| g.0 - 1).collect();
    let pq: Vec<usize> = (0..N).filter(|b| !gen_bus.contains(b)).collect();
    let build = |x: &[f64]| -> Vec<C> {
        let mut vm = [1.0; N];
        for &(bus, _, vs) in &GENS {
            vm[bus - 1] = vs;
        }
        for (k, &b) in pq.iter().enumerate() {
            vm[b] = x[N - 1 + k];
        }
        (0..N)
            .map(|b| {
                let th = if b == 0 { 0.0 } else { x[b - 1] };
                C::from_polar(vm[b], th)
            })
            .collect()
    };
    let f = |x: &[f64]| -> Vec<f64> {
        let v = build(x);
        let s = injections(&y, &v);
        let mut pspec = [0.0; N];
        for &(bus, p, _) in &GENS[1..] {
            pspec[bus - 1] += p;
        }
        let mut r = Vec::new();
        for b in 1..N {
            r.push(s[b].re - (pspec[b] - load[b].re));
        }
        for &b in &pq {
            r.push(s[b].im + load[b].im);
        }
        r
    };
    let mut x0 = vec![0.0; N - 1];
    x0.extend(std::iter::repeat_n(1.0, pq.len()));
    let x = newton(f, x0, 1e-12);
    let v = build(&x);
    let s = injections(&y, &v);
    let s_gen = gen_bus.iter().map(|&b| s[b] + load[b]).collect();
    PowerFlow {
        v: v.iter().map(|c| c.norm()).collect(),
        theta: v.iter().map(|c| c.arg()).collect(),
        s_gen,
    }
}

fn exciter(vf: f64) -> f64 {
    let (_, ke, ae, be) = EXCITER;
    vf * (ke + ae * (be * vf.abs()).exp())
}

/// Field voltage and electrical torque of a machine in steady state, from
/// its terminal voltage and current phasors.
fn machine_steady(g: usize, v: C, i: C) -> (f64, f64) {
    let (ra, xd, xdp, xq, _) = MACHINES[g];
    let e = v + C::new(ra, xq) * i;
    let delta = e.arg();
    let rot = C::from_polar(1.0, std::f64::consts::FRAC_PI_2 - delta);
    let idq = i * rot;
    let vdq = v * rot;
    let (id, iq) = (idq.re, idq.im);
    let vq = vdq.im;
    let eqp = vq + ra * iq + xdp * id;
    let vf = eqp + (xd - xdp) * id;
    let tau_e = (v * i.conj()).re + ra * i.norm_sqr();
    (vf, tau_e)
}

pub struct Setpoints {
    pub tau_m: Vec<f64>,
    pub v_ref: Vec<f64>,
}

pub fn setpoints(pf: &PowerFlow) -> Setpoints {
    let mut tau_m = Vec::new();
    let mut v_ref = Vec::new();
    for (g, &(bus, _, _)) in GENS.iter().enumerate() {
        let b = bus - 1;
        let v = C::from_polar(pf.v[b], pf.theta[b]);
        let i = (pf.s_gen[g] / v).conj();
        let (vf, te) = machine_steady(g, v, i);
        tau_m.push(te);
        v_ref.push(pf.v[b] + exciter(vf) / EXCITER.0);
    }
    Setpoints { tau_m, v_ref }
}

pub struct SteadyState {
    pub v: Vec<f64>,
    /// Angles relative to bus 1.
    pub theta: Vec<f64>,
    pub omega: f64,
}

/// Steady state of the full machine/exciter/network model with fixed
/// mechanical torque and exciter reference: every machine runs at the same
/// speed and carries `tau_m - D (omega - 1)`.
pub fn steady_state(sp: &Setpoints, pl: &[f64], ql: &[f64], start: &PowerFlow) -> SteadyState {
    let y = ybus();
    let load = load_vectors(pl, ql);
    let ng = GENS.len();
    // x = [theta_2..14, V_1..14, (I_re, I_im) per machine, omega]
    let unpack = |x: &[f64]| -> (Vec<C>, Vec<C>, f64) {
        let v = (0..N)
            .map(|b| C::from_polar(x[N - 1 + b], if b == 0 { 0.0 } else { x[b - 1] }))
            .collect();
        let i = (0..ng)
            .map(|g| C::new(x[2 * N - 1 + 2 * g], x[2 * N + 2 * g]))
            .collect();
        (v, i, x[2 * N - 1 + 2 * ng])
    };
    let f = |x: &[f64]| -> Vec<f64> {
        let (v, i, omega) = unpack(x);
        let mut gen = vec![C::new(0.0, 0.0); N];
        let mut r = Vec::new();
        for (g, &(bus, _, _)) in GENS.iter().enumerate() {
            let b = bus - 1;
            gen[b] += v[b] * i[g].conj();
            let (vf, te) = machine_steady(g, v[b], i[g]);
            r.push(te - (sp.tau_m[g] - MACHINES[g].4 * (omega - 1.0)));
            r.push(exciter(vf) - EXCITER.0 * (sp.v_ref[g] - v[b].norm()));
        }
        let s = injections(&y, &v);
        for b in 0..N {
            let mis = s[b] - gen[b] + load[b];
            r.push(mis.re);
            r.push(mis.im);
        }
        r
    };
    let mut x0: Vec<f64> = start.theta[1..]
        .iter()
        .map(|t| t - start.theta[0])
        .collect();
    x0.extend_from_slice(&start.v);
    for (g, &(bus, _, _)) in GENS.iter().enumerate() {
        let b = bus - 1;
        let i = (start.s_gen[g] / C::from_polar(start.v[b], start.theta[b])).conj();
        x0.push(i.re);
        x0.push(i.im);
    }
    x0.push(1.0);
    let x = newton(f, x0, 1e-12);
    let (v, _, omega) = unpack(&x);
    SteadyState {
        v: v.iter().map(|c| c.norm()).collect(),
        theta: v.iter().map(|c| c.arg()).collect(),
        omega,
    }
}
