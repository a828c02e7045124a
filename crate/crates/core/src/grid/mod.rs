//! Static grid data and the differential-algebraic residual equations of a
//! multi-machine system with two-axis generators, DC1-type exciters and
//! constant-power loads.

mod case;
mod flow;

pub use case::{load_case, reference_case, REFERENCE_CASE};
pub use flow::{admittance_polar, branch_flow, BranchKind, BranchParams, Side};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    pub r_a: f64,
    pub x_d: f64,
    pub x_d_p: f64,
    pub x_q: f64,
    pub x_q_p: f64,
    pub t_d0_p: f64,
    pub t_q0_p: f64,
    pub h: f64,
    pub d: f64,
    /// Mechanical torque; filled in by equilibrium initialization.
    pub tau_m: f64,
    pub omega_b: f64,
    pub omega_s: f64,
    /// Bus index (0-based) the machine is attached to.
    pub bus: usize,
    /// Power-flow setpoints.
    pub p_set: f64,
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvrParams {
    pub k_a: f64,
    pub t_a: f64,
    pub k_e: f64,
    pub t_e: f64,
    pub k_f: f64,
    pub t_f: f64,
    pub a_e: f64,
    pub b_e: f64,
    /// Voltage measurement filter time constant.
    pub t_m: f64,
    /// Voltage reference; filled in by equilibrium initialization.
    pub v_ref: f64,
    pub v_r_min: f64,
    pub v_r_max: f64,
}

impl AvrParams {
    /// Regulator output limiter.
    pub fn limit(&self, v_r1: f64) -> f64 {
        if v_r1 < self.v_r_min {
            self.v_r_min
        } else if v_r1 > self.v_r_max {
            self.v_r_max
        } else {
            v_r1
        }
    }

    /// Exciter field-voltage characteristic `v_f (K_e + A_e exp(B_e |v_f|))`.
    pub fn exciter(&self, v_f: f64) -> f64 {
        v_f * (self.k_e + self.a_e * (self.b_e * v_f.abs()).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub machine: MachineParams,
    pub avr: AvrParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    pub shed_flag: bool,
}

impl LoadParams {
    pub fn effective(&self) -> (f64, f64) {
        if self.shed_flag {
            (0.0, 0.0)
        } else {
            (self.p, self.q)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number as written in the case file.
    pub id: usize,
    pub kind: BusKind,
    /// Constant shunt admittance to ground.
    pub g_sh: f64,
    pub b_sh: f64,
}

/// Differential states of one machine, in vector order.
pub const MACHINE_STATES: [&str; 8] = ["delta", "omega", "eqp", "edp", "vm", "vr1", "vr2", "vf"];
/// Algebraic stator currents of one machine, in vector order.
pub const STATOR_STATES: [&str; 2] = ["id", "iq"];

pub const DELTA: usize = 0;
pub const OMEGA: usize = 1;
pub const EQP: usize = 2;
pub const EDP: usize = 3;
pub const VM: usize = 4;
pub const VR1: usize = 5;
pub const VR2: usize = 6;
pub const VF: usize = 7;

/// Position of every state in the flat vector. Differential states come
/// first (8 per machine), then stator currents (2 per machine), then bus
/// voltage magnitude and angle (2 per bus).
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    n_gen: usize,
    n_bus: usize,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl StateLayout {
    fn new(buses: &[Bus], generators: &[Generator]) -> Self {
        let n_gen = generators.len();
        let n_bus = buses.len();
        let mut names = Vec::with_capacity(10 * n_gen + 2 * n_bus);
        for g in generators {
            let id = buses[g.machine.bus].id;
            names.extend(MACHINE_STATES.iter().map(|s| format!("{s}_g{id}")));
        }
        for g in generators {
            let id = buses[g.machine.bus].id;
            names.extend(STATOR_STATES.iter().map(|s| format!("{s}_g{id}")));
        }
        for b in buses {
            names.push(format!("V_{}", b.id));
            names.push(format!("theta_{}", b.id));
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        StateLayout {
            n_gen,
            n_bus,
            names,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_differential(&self) -> usize {
        8 * self.n_gen
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn machine(&self, gen: usize, state: usize) -> usize {
        8 * gen + state
    }

    pub fn i_d(&self, gen: usize) -> usize {
        8 * self.n_gen + 2 * gen
    }

    pub fn i_q(&self, gen: usize) -> usize {
        8 * self.n_gen + 2 * gen + 1
    }

    pub fn v(&self, bus: usize) -> usize {
        10 * self.n_gen + 2 * bus
    }

    pub fn theta(&self, bus: usize) -> usize {
        10 * self.n_gen + 2 * bus + 1
    }

    /// Residual row carrying the active power balance of `bus`.
    pub fn p_row(&self, bus: usize) -> usize {
        self.v(bus)
    }

    /// Residual row carrying the reactive power balance of `bus`.
    pub fn q_row(&self, bus: usize) -> usize {
        self.theta(bus)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub freq_hz: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<BranchParams>,
    pub loads: Vec<LoadParams>,
    pub slack: usize,
    layout: StateLayout,
    /// For every bus, the branches incident to it and which side it is.
    incidence: Vec<Vec<(usize, Side)>>,
    gen_at_bus: Vec<Option<usize>>,
}

impl GridModel {
    /// Validates the parts and assembles a model.
    pub fn new(
        base_mva: f64,
        freq_hz: f64,
        buses: Vec<Bus>,
        generators: Vec<Generator>,
        branches: Vec<BranchParams>,
        loads: Vec<LoadParams>,
    ) -> Result<Self> {
        let n = buses.len();
        if n == 0 {
            return Err(Error::Model("no buses".into()));
        }
        let mut slack: Option<usize> = None;
        for (i, b) in buses.iter().enumerate() {
            if b.kind == BusKind::Slack {
                if let Some(s) = slack {
                    return Err(Error::DuplicateSlack(buses[s].id, b.id));
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or_else(|| Error::Model("no slack bus".into()))?;

        for br in &branches {
            if br.from >= n || br.to >= n {
                return Err(Error::Model("branch references unknown bus".into()));
            }
            if !(br.y >= 0.0) || !(br.m > 0.0) {
                return Err(Error::Model(format!(
                    "branch {}-{} has invalid admittance or tap",
                    buses[br.from].id, buses[br.to].id
                )));
            }
            if br.kind == BranchKind::Line && br.m != 1.0 {
                return Err(Error::Model("line with tap ratio != 1".into()));
            }
        }
        let mut gen_at_bus = vec![None; n];
        for (k, g) in generators.iter().enumerate() {
            validate_generator(g)?;
            if g.machine.bus >= n {
                return Err(Error::Model("generator references unknown bus".into()));
            }
            if gen_at_bus[g.machine.bus].replace(k).is_some() {
                return Err(Error::Model(format!(
                    "more than one machine at bus {}",
                    buses[g.machine.bus].id
                )));
            }
        }
        for l in &loads {
            if l.bus >= n {
                return Err(Error::Model("load references unknown bus".into()));
            }
        }

        let mut incidence = vec![Vec::new(); n];
        for (k, br) in branches.iter().enumerate() {
            incidence[br.from].push((k, Side::Sending));
            incidence[br.to].push((k, Side::Receiving));
        }

        // Breadth-first reachability from the slack.
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(b) = queue.pop_front() {
            for &(k, _) in &incidence[b] {
                let other = if branches[k].from == b {
                    branches[k].to
                } else {
                    branches[k].from
                };
                if !seen[other] {
                    seen[other] = true;
                    queue.push_back(other);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Disconnected(buses[i].id));
        }

        let layout = StateLayout::new(&buses, &generators);
        Ok(GridModel {
            base_mva,
            freq_hz,
            buses,
            generators,
            branches,
            loads,
            slack,
            layout,
            incidence,
            gen_at_bus,
        })
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_load(&self) -> usize {
        self.loads.len()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn generator_at(&self, bus: usize) -> Option<usize> {
        self.gen_at_bus.get(bus).copied().flatten()
    }

    pub fn load_at(&self, bus: usize) -> Option<usize> {
        self.loads.iter().position(|l| l.bus == bus)
    }

    pub fn incident(&self, bus: usize) -> &[(usize, Side)] {
        &self.incidence[bus]
    }

    /// Sum of branch and shunt flows into `bus`.
    pub fn network_injection(&self, bus: usize, v: &[f64], theta: &[f64]) -> (f64, f64) {
        let mut p = 0.0;
        let mut q = 0.0;
        for &(k, side) in &self.incidence[bus] {
            let br = &self.branches[k];
            let far = if side == Side::Sending {
                br.to
            } else {
                br.from
            };
            let (pb, qb) = branch_flow(v[bus], theta[bus], v[far], theta[far], br, side);
            p += pb;
            q += qb;
        }
        let b = &self.buses[bus];
        let v2 = v[bus] * v[bus];
        (p - b.g_sh * v2, q + b.b_sh * v2)
    }

    /// Returns a copy whose machine and exciter setpoints are replaced.
    pub fn with_setpoints(&self, tau_m: &[f64], v_ref: &[f64]) -> GridModel {
        let mut m = self.clone();
        for (g, (&t, &v)) in m.generators.iter_mut().zip(tau_m.iter().zip(v_ref)) {
            g.machine.tau_m = t;
            g.avr.v_ref = v;
        }
        m
    }
}

fn validate_generator(g: &Generator) -> Result<()> {
    let m = &g.machine;
    let a = &g.avr;
    let ok = m.h > 0.0
        && m.t_d0_p > 0.0
        && m.t_q0_p > 0.0
        && m.x_d_p > 0.0
        && m.x_d >= m.x_d_p
        && m.x_q_p > 0.0
        && m.x_q >= m.x_q_p
        && m.omega_b > 0.0
        && a.t_a > 0.0
        && a.t_e > 0.0
        && a.t_f > 0.0
        && a.t_m > 0.0
        && a.v_r_min < a.v_r_max;
    if ok {
        Ok(())
    } else {
        Err(Error::Model(
            "machine or exciter parameters out of range".into(),
        ))
    }
}

/// Base angular frequency in rad/s.
pub fn omega_base(freq_hz: f64) -> f64 {
    2.0 * PI * freq_hz
}

/// A point in state space. Offsets are given by [`GridModel::layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub values: Vec<f64>,
}

impl SystemState {
    pub fn zeros(model: &GridModel) -> Self {
        SystemState {
            values: vec![0.0; model.layout().len()],
        }
    }

    pub fn get(&self, model: &GridModel, name: &str) -> Option<f64> {
        model.layout().index(name).map(|i| self.values[i])
    }
}

/// Terminal quantities of a machine derived from the state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineOutputs {
    pub v_d: f64,
    pub v_q: f64,
    pub p_g: f64,
    pub q_g: f64,
    pub tau_e: f64,
}

pub fn machine_outputs(model: &GridModel, x: &[f64], gen: usize) -> MachineOutputs {
    let lay = model.layout();
    let m = &model.generators[gen].machine;
    let v = x[lay.v(m.bus)];
    let theta = x[lay.theta(m.bus)];
    let delta = x[lay.machine(gen, DELTA)];
    let i_d = x[lay.i_d(gen)];
    let i_q = x[lay.i_q(gen)];
    let (s, c) = (delta - theta).sin_cos();
    let v_d = v * s;
    let v_q = v * c;
    MachineOutputs {
        v_d,
        v_q,
        p_g: v_d * i_d + v_q * i_q,
        q_g: v_q * i_d - v_d * i_q,
        tau_e: (m.r_a * i_q + v_q) * i_q + (m.r_a * i_d + v_d) * i_d,
    }
}

/// Per-load effective demand after shedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadDemand {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl LoadDemand {
    pub fn from_model(model: &GridModel) -> Self {
        let (p, q) = model.loads.iter().map(|l| l.effective()).unzip();
        LoadDemand { p, q }
    }
}

/// Evaluates the system equations at `x`.
///
/// Rows `0..8G` hold the differential right-hand sides; the remaining rows
/// hold algebraic residuals (stator equations in the current slots, active
/// and reactive bus balance in the voltage and angle slots).
pub fn residuals(model: &GridModel, x: &[f64], loads: &LoadDemand, out: &mut [f64]) -> Result<()> {
    let lay = model.layout();
    if x.len() != lay.len() {
        return Err(Error::Dimension {
            expected: lay.len(),
            got: x.len(),
        });
    }
    if out.len() != lay.len() {
        return Err(Error::Dimension {
            expected: lay.len(),
            got: out.len(),
        });
    }
    if loads.p.len() != model.n_load() || loads.q.len() != model.n_load() {
        return Err(Error::Dimension {
            expected: model.n_load(),
            got: loads.p.len(),
        });
    }
    residuals_unchecked(model, x, loads, out);
    Ok(())
}

pub(crate) fn residuals_unchecked(
    model: &GridModel,
    x: &[f64],
    loads: &LoadDemand,
    out: &mut [f64],
) {
    let lay = model.layout();
    let nb = model.n_bus();
    let v_off = lay.v(0);

    for (k, gen) in model.generators.iter().enumerate() {
        let m = &gen.machine;
        let a = &gen.avr;
        let base = lay.machine(k, 0);
        let st = &x[base..base + 8];
        let (omega, eqp, edp) = (st[OMEGA], st[EQP], st[EDP]);
        let (vm, vr1, vr2, vf) = (st[VM], st[VR1], st[VR2], st[VF]);
        let i_d = x[lay.i_d(k)];
        let i_q = x[lay.i_q(k)];
        let v = x[lay.v(m.bus)];
        let o = machine_outputs(model, x, k);

        let f = &mut out[base..base + 8];
        f[DELTA] = m.omega_b * (omega - m.omega_s);
        f[OMEGA] = (m.tau_m - o.tau_e - m.d * (omega - m.omega_s)) / (2.0 * m.h);
        f[EQP] = (-eqp - (m.x_d - m.x_d_p) * i_d + vf) / m.t_d0_p;
        f[EDP] = (-edp + (m.x_q - m.x_q_p) * i_q) / m.t_q0_p;
        f[VM] = (v - vm) / a.t_m;
        let kf_tf = a.k_f / a.t_f;
        f[VR1] = (a.k_a * (a.v_ref - vm - vr2 - kf_tf * vf) - vr1) / a.t_a;
        f[VR2] = -(kf_tf * vf + vr2) / a.t_f;
        f[VF] = -(a.exciter(vf) - a.limit(vr1)) / a.t_e;

        out[lay.i_d(k)] = o.v_q + m.r_a * i_q - eqp + m.x_d_p * i_d;
        out[lay.i_q(k)] = o.v_d + m.r_a * i_d - edp - m.x_q_p * i_q;
    }

    let v: Vec<f64> = (0..nb).map(|b| x[v_off + 2 * b]).collect();
    let th: Vec<f64> = (0..nb).map(|b| x[v_off + 2 * b + 1]).collect();
    for b in 0..nb {
        let (p, q) = model.network_injection(b, &v, &th);
        out[lay.p_row(b)] = p;
        out[lay.q_row(b)] = q;
    }
    for k in 0..model.n_gen() {
        let bus = model.generators[k].machine.bus;
        let o = machine_outputs(model, x, k);
        out[lay.p_row(bus)] += o.p_g;
        out[lay.q_row(bus)] += o.q_g;
    }
    for (l, load) in model.loads.iter().enumerate() {
        out[lay.p_row(load.bus)] -= loads.p[l];
        out[lay.q_row(load.bus)] -= loads.q[l];
    }
}
