//! Plain-text case format.
//!
//! A case file is a sequence of sections, each introduced by a line holding
//! only the section name, followed by rows of whitespace-separated numbers.
//! `#` starts a comment. Sections and column order:
//!
//! ```text
//! BASE    mva freq_hz
//! BUS     id type gs bs                  (type: 1 = PQ, 2 = PV, 3 = slack)
//! BRANCH  from to r x b_total tap        (tap 0 marks a line)
//! GEN     bus p_set v_set r_a x_d x_d' x_q x_q' T_d0' T_q0' H D
//! AVR     bus K_a T_a K_e T_e K_f T_f A_e B_e T_m v_r_min v_r_max
//! LOAD    bus PL QL
//! ```
//!
//! Bus references use the external bus id. Every GEN row needs a matching
//! AVR row.

use super::{
    omega_base, AvrParams, BranchParams, Bus, BusKind, Generator, GridModel, LoadParams,
    MachineParams,
};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// The bundled IEEE 14-bus dynamic case.
pub const REFERENCE_CASE: &str = include_str!("../../data/ieee14.case");

/// Parses [`REFERENCE_CASE`].
pub fn reference_case() -> GridModel {
    load_case(REFERENCE_CASE).expect("bundled case is valid")
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Section {
    Base,
    Bus,
    Branch,
    Gen,
    Avr,
    Load,
}

impl Section {
    fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().as_str() {
            "BASE" => Section::Base,
            "BUS" => Section::Bus,
            "BRANCH" => Section::Branch,
            "GEN" => Section::Gen,
            "AVR" => Section::Avr,
            "LOAD" => Section::Load,
            _ => return None,
        })
    }

    fn columns(self) -> usize {
        match self {
            Section::Base => 2,
            Section::Bus => 4,
            Section::Branch => 6,
            Section::Gen => 12,
            Section::Avr => 12,
            Section::Load => 3,
        }
    }
}

struct Row {
    line: usize,
    vals: Vec<f64>,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn load_case(text: &str) -> Result<GridModel> {
    let mut rows: HashMap<Section, Vec<Row>> = HashMap::new();
    let mut current = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(sec) = Section::parse(content) {
            current = Some(sec);
            continue;
        }
        let sec = current.ok_or_else(|| err(line, "data before any section header"))?;
        let vals = content
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| err(line, format!("not a number: {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != sec.columns() {
            return Err(err(
                line,
                format!("expected {} columns, found {}", sec.columns(), vals.len()),
            ));
        }
        rows.entry(sec).or_default().push(Row { line, vals });
    }

    let (base_mva, freq_hz) = match rows.get(&Section::Base).map(Vec::as_slice) {
        None => (100.0, 60.0),
        Some([r]) => (r.vals[0], r.vals[1]),
        Some(rs) => return Err(err(rs[1].line, "BASE has more than one row")),
    };

    let mut buses = Vec::new();
    let mut bus_index = HashMap::new();
    for r in rows.get(&Section::Bus).into_iter().flatten() {
        let id = as_id(r, 0)?;
        let kind = match r.vals[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            t => return Err(err(r.line, format!("unknown bus type {t}"))),
        };
        if bus_index.insert(id, buses.len()).is_some() {
            return Err(err(r.line, format!("duplicate bus id {id}")));
        }
        buses.push(Bus {
            id,
            kind,
            g_sh: r.vals[2],
            b_sh: r.vals[3],
        });
    }
    let lookup = |r: &Row, col: usize| -> Result<usize> {
        let id = as_id(r, col)?;
        bus_index
            .get(&id)
            .copied()
            .ok_or_else(|| err(r.line, format!("unknown bus id {id}")))
    };

    let mut branches = Vec::new();
    for r in rows.get(&Section::Branch).into_iter().flatten() {
        let (from, to) = (lookup(r, 0)?, lookup(r, 1)?);
        let (res, x, b, tap) = (r.vals[2], r.vals[3], r.vals[4], r.vals[5]);
        if res == 0.0 && x == 0.0 {
            return Err(err(r.line, "zero branch impedance"));
        }
        let tap = (tap != 0.0).then_some(tap);
        branches.push(BranchParams::from_impedance(from, to, res, x, b, tap));
    }

    let mut avrs = HashMap::new();
    for r in rows.get(&Section::Avr).into_iter().flatten() {
        let bus = lookup(r, 0)?;
        let v = &r.vals;
        let avr = AvrParams {
            k_a: v[1],
            t_a: v[2],
            k_e: v[3],
            t_e: v[4],
            k_f: v[5],
            t_f: v[6],
            a_e: v[7],
            b_e: v[8],
            t_m: v[9],
            v_ref: 1.0,
            v_r_min: v[10],
            v_r_max: v[11],
        };
        if avrs.insert(bus, avr).is_some() {
            return Err(err(r.line, "duplicate AVR row"));
        }
    }

    let omega_b = omega_base(freq_hz);
    let mut generators = Vec::new();
    for r in rows.get(&Section::Gen).into_iter().flatten() {
        let bus = lookup(r, 0)?;
        let v = &r.vals;
        let machine = MachineParams {
            r_a: v[3],
            x_d: v[4],
            x_d_p: v[5],
            x_q: v[6],
            x_q_p: v[7],
            t_d0_p: v[8],
            t_q0_p: v[9],
            h: v[10],
            d: v[11],
            tau_m: 0.0,
            omega_b,
            omega_s: 1.0,
            bus,
            p_set: v[1],
            v_set: v[2],
        };
        let avr = avrs
            .remove(&bus)
            .ok_or_else(|| err(r.line, "generator without an AVR row"))?;
        generators.push(Generator { machine, avr });
    }
    if let Some(bus) = avrs.keys().next() {
        return Err(Error::Model(format!(
            "AVR at bus {} has no generator",
            buses[*bus].id
        )));
    }

    let mut loads = Vec::new();
    for r in rows.get(&Section::Load).into_iter().flatten() {
        loads.push(LoadParams {
            bus: lookup(r, 0)?,
            p: r.vals[1],
            q: r.vals[2],
            shed_flag: false,
        });
    }

    GridModel::new(base_mva, freq_hz, buses, generators, branches, loads)
}

fn as_id(r: &Row, col: usize) -> Result<usize> {
    let v = r.vals[col];
    if v < 0.0 || v.fract() != 0.0 {
        return Err(err(r.line, format!("invalid bus id {v}")));
    }
    Ok(v as usize)
}
