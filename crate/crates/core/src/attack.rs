//! Instability-attack feedback: a compromised node reads one grid quantity
//! and writes a gain-scaled copy of its deviation into another.
//!
//! For `t >= t_on` the injected signal is
//!
//! ```text
//! u(t) = K * (x_read(t) - x_read(t_on) + probe)
//! ```
//!
//! where `probe` is a small spoofed offset on the read measurement that
//! gives the loop something to amplify when the grid sits exactly at
//! equilibrium. The signal is added to the right-hand side of a machine
//! state, to a bus balance row, or to a load's effective demand.

use crate::error::{Error, Result};
use crate::grid::{machine_outputs, GridModel, LoadDemand, DELTA, EDP, EQP, OMEGA};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackVar {
    #[serde(rename = "omega")]
    Omega,
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "V")]
    V,
    #[serde(rename = "theta")]
    Theta,
    #[serde(rename = "PL")]
    Pl,
    #[serde(rename = "QL")]
    Ql,
    #[serde(rename = "PG")]
    Pg,
    #[serde(rename = "QG")]
    Qg,
    #[serde(rename = "eqp")]
    Eqp,
    #[serde(rename = "edp")]
    Edp,
}

impl AttackVar {
    pub const ALL: [AttackVar; 10] = [
        AttackVar::Omega,
        AttackVar::Delta,
        AttackVar::V,
        AttackVar::Theta,
        AttackVar::Pl,
        AttackVar::Ql,
        AttackVar::Pg,
        AttackVar::Qg,
        AttackVar::Eqp,
        AttackVar::Edp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackVar::Omega => "omega",
            AttackVar::Delta => "delta",
            AttackVar::V => "V",
            AttackVar::Theta => "theta",
            AttackVar::Pl => "PL",
            AttackVar::Ql => "QL",
            AttackVar::Pg => "PG",
            AttackVar::Qg => "QG",
            AttackVar::Eqp => "eqp",
            AttackVar::Edp => "edp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AttackVar::ALL.into_iter().find(|v| v.name() == s)
    }

    fn node_kind(self) -> NodeKind {
        match self {
            AttackVar::Omega
            | AttackVar::Delta
            | AttackVar::Eqp
            | AttackVar::Edp
            | AttackVar::Pg
            | AttackVar::Qg => NodeKind::Machine,
            AttackVar::V | AttackVar::Theta => NodeKind::Bus,
            AttackVar::Pl | AttackVar::Ql => NodeKind::Load,
        }
    }
}

impl fmt::Display for AttackVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum NodeKind {
    Machine,
    Bus,
    Load,
}

/// A grid quantity at a node, addressed by external bus id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Target {
    pub node: usize,
    pub var: AttackVar,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.var, self.node)
    }
}

pub const DEFAULT_PROBE: f64 = 1e-3;

fn default_probe() -> f64 {
    DEFAULT_PROBE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub read: Target,
    pub write: Target,
    pub gain: f64,
    pub t_on: f64,
    #[serde(default = "default_probe")]
    pub probe: f64,
}

impl AttackSpec {
    pub fn new(read: Target, write: Target, gain: f64, t_on: f64) -> Self {
        AttackSpec {
            read,
            write,
            gain,
            t_on,
            probe: DEFAULT_PROBE,
        }
    }

    pub fn with_gain(&self, gain: f64) -> Self {
        AttackSpec {
            gain,
            ..self.clone()
        }
    }

    /// Short stable identifier, e.g. `omega@3>PG@9`.
    pub fn key(&self) -> String {
        format!("{}>{}", self.read, self.write)
    }
}

/// A target resolved against a model's indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolved {
    /// Machine differential state (offset into the state vector).
    Machine {
        gen: usize,
        state: usize,
    },
    BusV(usize),
    BusTheta(usize),
    GenP(usize),
    GenQ(usize),
    LoadP(usize),
    LoadQ(usize),
}

pub fn resolve(model: &GridModel, t: &Target) -> Result<Resolved> {
    let bus = model
        .bus_index(t.node)
        .ok_or_else(|| Error::InvalidTarget(format!("{t}: no bus {}", t.node)))?;
    let missing = |what: &str| Error::InvalidTarget(format!("{t}: bus {} has no {what}", t.node));
    Ok(match t.var.node_kind() {
        NodeKind::Machine => {
            let gen = model.generator_at(bus).ok_or_else(|| missing("machine"))?;
            match t.var {
                AttackVar::Omega => Resolved::Machine { gen, state: OMEGA },
                AttackVar::Delta => Resolved::Machine { gen, state: DELTA },
                AttackVar::Eqp => Resolved::Machine { gen, state: EQP },
                AttackVar::Edp => Resolved::Machine { gen, state: EDP },
                AttackVar::Pg => Resolved::GenP(gen),
                _ => Resolved::GenQ(gen),
            }
        }
        NodeKind::Bus => match t.var {
            AttackVar::V => Resolved::BusV(bus),
            _ => Resolved::BusTheta(bus),
        },
        NodeKind::Load => {
            let load = model.load_at(bus).ok_or_else(|| missing("load"))?;
            match t.var {
                AttackVar::Pl => Resolved::LoadP(load),
                _ => Resolved::LoadQ(load),
            }
        }
    })
}

impl Resolved {
    /// Current value of the quantity.
    pub fn read(&self, model: &GridModel, x: &[f64], loads: &LoadDemand) -> f64 {
        let lay = model.layout();
        match *self {
            Resolved::Machine { gen, state } => x[lay.machine(gen, state)],
            Resolved::BusV(b) => x[lay.v(b)],
            Resolved::BusTheta(b) => x[lay.theta(b)],
            Resolved::GenP(g) => machine_outputs(model, x, g).p_g,
            Resolved::GenQ(g) => machine_outputs(model, x, g).q_g,
            Resolved::LoadP(l) => loads.p[l],
            Resolved::LoadQ(l) => loads.q[l],
        }
    }

    /// Residual row the signal is written to and the sign it enters with.
    ///
    /// Voltage magnitude couples to the reactive balance and angle to the
    /// active balance; a load write raises the effective demand, which
    /// enters the balance with a negative sign.
    pub fn write_row(&self, model: &GridModel) -> (usize, f64) {
        let lay = model.layout();
        match *self {
            Resolved::Machine { gen, state } => (lay.machine(gen, state), 1.0),
            Resolved::BusV(b) => (lay.q_row(b), 1.0),
            Resolved::BusTheta(b) => (lay.p_row(b), 1.0),
            Resolved::GenP(g) => (lay.p_row(model.generators[g].machine.bus), 1.0),
            Resolved::GenQ(g) => (lay.q_row(model.generators[g].machine.bus), 1.0),
            Resolved::LoadP(l) => (lay.p_row(model.loads[l].bus), -1.0),
            Resolved::LoadQ(l) => (lay.q_row(model.loads[l].bus), -1.0),
        }
    }
}

/// An attack bound to a model, with the pre-attack reading it measures
/// deviations from.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmedAttack {
    pub spec: AttackSpec,
    read: Resolved,
    row: usize,
    sign: f64,
    reference: Option<f64>,
}

impl ArmedAttack {
    pub fn new(model: &GridModel, spec: &AttackSpec) -> Result<Self> {
        if !spec.gain.is_finite() || !spec.probe.is_finite() {
            return Err(Error::InvalidTarget("gain and probe must be finite".into()));
        }
        if !(spec.t_on >= 0.0) {
            return Err(Error::InvalidTarget("t_on must be non-negative".into()));
        }
        let read = resolve(model, &spec.read)?;
        let write = resolve(model, &spec.write)?;
        let (row, sign) = write.write_row(model);
        Ok(ArmedAttack {
            spec: spec.clone(),
            read,
            row,
            sign,
            reference: None,
        })
    }

    /// Latches the pre-attack reading. Called once, at `t_on`.
    pub fn arm(&mut self, model: &GridModel, x: &[f64], loads: &LoadDemand) {
        self.reference = Some(self.read.read(model, x, loads));
    }

    pub fn with_reference(mut self, reference: f64) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn reference(&self) -> Option<f64> {
        self.reference
    }

    pub fn read_target(&self) -> Resolved {
        self.read
    }

    /// The injected signal at `(x, t)`; zero before activation.
    pub fn signal(&self, model: &GridModel, x: &[f64], loads: &LoadDemand, t: f64) -> f64 {
        match self.reference {
            Some(r) if t >= self.spec.t_on => {
                self.spec.gain * (self.read.read(model, x, loads) - r + self.spec.probe)
            }
            _ => 0.0,
        }
    }

    /// Adds the attack term to `residual`. Identity before `t_on` or
    /// before the reference is latched.
    pub fn inject(
        &self,
        model: &GridModel,
        x: &[f64],
        loads: &LoadDemand,
        t: f64,
        residual: &mut [f64],
    ) {
        let u = self.signal(model, x, loads, t);
        if u != 0.0 {
            residual[self.row] += self.sign * u;
        }
    }
}

/// Every (read, write) pair drawn from the two variable catalogs, with
/// identical targets excluded. Nodes are visited in bus order, variables
/// in the order given.
pub fn enumerate_attacks(
    model: &GridModel,
    read_vars: &[AttackVar],
    write_vars: &[AttackVar],
    gain: f64,
) -> Result<Vec<AttackSpec>> {
    if read_vars.is_empty() || write_vars.is_empty() {
        return Err(Error::config("attack catalogs must be non-empty"));
    }
    let reads = targets(model, read_vars);
    let writes = targets(model, write_vars);
    let mut out = Vec::with_capacity(reads.len() * writes.len());
    for r in &reads {
        for w in &writes {
            if r != w {
                out.push(AttackSpec::new(*r, *w, gain, 0.0));
            }
        }
    }
    Ok(out)
}

/// All valid targets for the given variables, deduplicated.
pub fn targets(model: &GridModel, vars: &[AttackVar]) -> Vec<Target> {
    let mut out = Vec::new();
    for &var in vars {
        for bus in &model.buses {
            let t = Target { node: bus.id, var };
            if resolve(model, &t).is_ok() && !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::reference_case;

    fn tgt(node: usize, var: AttackVar) -> Target {
        Target { node, var }
    }

    #[test]
    fn single_pair_and_self_exclusion() {
        let m = reference_case();
        let one = enumerate_attacks(&m, &[AttackVar::Omega], &[AttackVar::V], 1.0).unwrap();
        // 5 machines x 14 buses.
        assert_eq!(one.len(), 70);
        let a = targets(&m, &[AttackVar::Omega]);
        assert_eq!(a.len(), 5);

        let reads = [tgt(3, AttackVar::Omega)];
        let writes = [tgt(9, AttackVar::V)];
        let pairs: Vec<_> = reads
            .iter()
            .flat_map(|r| {
                writes
                    .iter()
                    .filter(move |w| *w != r)
                    .map(move |w| (*r, *w))
            })
            .collect();
        assert_eq!(pairs.len(), 1);
        assert!(enumerate_attacks(&m, &[], &[AttackVar::V], 1.0).is_err());
    }

    #[test]
    fn identical_targets_are_excluded() {
        let text = "BUS\n1 3 0 0\n2 1 0 0\nBRANCH\n1 2 0 0.2 0 0\nLOAD\n2 0.1 0\n";
        let m = crate::grid::load_case(text).unwrap();
        let v = enumerate_attacks(&m, &[AttackVar::Pl], &[AttackVar::Pl], 1.0).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn invalid_targets_are_rejected() {
        let m = reference_case();
        // Bus 4 has no machine; bus 1 has no load; bus 99 does not exist.
        assert!(resolve(&m, &tgt(4, AttackVar::Omega)).is_err());
        assert!(resolve(&m, &tgt(1, AttackVar::Pl)).is_err());
        assert!(resolve(&m, &tgt(99, AttackVar::V)).is_err());
    }

    #[test]
    fn json_shape() {
        let spec = AttackSpec::new(tgt(3, AttackVar::Omega), tgt(9, AttackVar::V), 2.5, 1.0);
        let js = serde_json::to_value(&spec).unwrap();
        assert_eq!(js["read"]["node"], 3);
        assert_eq!(js["read"]["var"], "omega");
        assert_eq!(js["write"]["var"], "V");
        let back: AttackSpec =
            serde_json::from_str(r#"{"read":{"node":3,"var":"omega"},"write":{"node":9,"var":"V"},"gain":2.5,"t_on":1.0}"#)
                .unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn identity_before_activation_and_linear_in_gain() {
        let m = reference_case();
        let x: Vec<f64> = (0..m.layout().len())
            .map(|i| 1.0 + 1e-3 * i as f64)
            .collect();
        let loads = LoadDemand::from_model(&m);
        let spec = AttackSpec::new(tgt(3, AttackVar::Omega), tgt(9, AttackVar::Theta), 4.0, 5.0);
        let armed = ArmedAttack::new(&m, &spec).unwrap().with_reference(0.99);
        let base = vec![0.25; x.len()];
        let mut r = base.clone();
        armed.inject(&m, &x, &loads, 4.999, &mut r);
        assert!(r.iter().zip(&base).all(|(a, b)| a.to_bits() == b.to_bits()));

        let s1 = armed.signal(&m, &x, &loads, 6.0);
        let armed2 = ArmedAttack::new(&m, &spec.with_gain(8.0))
            .unwrap()
            .with_reference(0.99);
        let s2 = armed2.signal(&m, &x, &loads, 6.0);
        assert_eq!(s2, 2.0 * s1);
    }
}
