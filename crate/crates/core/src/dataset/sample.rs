use super::sweep::ScenarioRecord;
use crate::attack::Target;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::labeler::{label_after_shed, Label, LabelerConfig, Verdict};
use crate::sim::Trajectory;
use serde::{Deserialize, Serialize};

/// Bus voltages and angles, machine speeds and rotor angles, and load
/// demands, in that order.
pub fn dataset_channels(model: &GridModel) -> Vec<String> {
    let bus_ids: Vec<usize> = model.buses.iter().map(|b| b.id).collect();
    let gen_ids: Vec<usize> = model
        .generators
        .iter()
        .map(|g| model.buses[g.machine.bus].id)
        .collect();
    let load_ids: Vec<usize> = model.loads.iter().map(|l| model.buses[l.bus].id).collect();
    let mut out = Vec::new();
    for (prefix, ids, infix) in [
        ("V", &bus_ids, ""),
        ("theta", &bus_ids, ""),
        ("omega", &gen_ids, "g"),
        ("delta", &gen_ids, "g"),
        ("PL", &load_ids, ""),
        ("QL", &load_ids, ""),
    ] {
        out.extend(ids.iter().map(|id| format!("{prefix}_{infix}{id}")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scenario_id: String,
    pub read: Target,
    pub write: Target,
    pub gain: f64,
    pub labeling: Label,
    /// Time of the last sample in the window.
    pub window_end: f64,
}

/// One classifier input: the pre-shed window of every channel, the shed
/// load, and the outcome label.
#[derive(Debug, Clone, PartialEq)]
pub struct ShedSample {
    pub id: String,
    pub n_channels: usize,
    pub n_steps: usize,
    /// Channel-major: `x[c * n_steps + k]`.
    pub x: Vec<f64>,
    pub load_index: usize,
    pub label: Verdict,
    pub meta: SampleMeta,
}

impl ShedSample {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.x[c * self.n_steps..(c + 1) * self.n_steps]
    }
}

/// Cuts the `pre_window` seconds before the shed and labels what follows
/// it. The last sample is one record period before the shed.
pub fn make_sample(
    traj: &Trajectory,
    rec: &ScenarioRecord,
    pre_window: f64,
    cfg: &LabelerConfig,
) -> Result<ShedSample> {
    let shed = traj
        .event("shed")
        .ok_or_else(|| Error::NotViable("trajectory has no shed event".into()))?;
    if traj.len() < 2 {
        return Err(Error::NotViable("trajectory too short".into()));
    }
    let period = traj.times[1] - traj.times[0];
    let n_steps = (pre_window / period).round() as usize;
    let pre = traj.window(shed.t - pre_window, shed.t);
    if pre.len() != n_steps {
        return Err(Error::NotViable(format!(
            "pre-shed window holds {} samples, expected {n_steps}",
            pre.len()
        )));
    }
    if n_steps == 0 {
        return Err(Error::config(
            "pre-shed window is shorter than one record period",
        ));
    }
    let labeling = label_after_shed(traj, cfg)?;
    let x = pre.samples.concat();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("pre-shed window of {}", rec.id)));
    }
    Ok(ShedSample {
        id: rec.id.clone(),
        n_channels: traj.channels.len(),
        n_steps,
        x,
        load_index: rec.load_index,
        label: labeling.verdict,
        meta: SampleMeta {
            scenario_id: rec.id.clone(),
            read: rec.attack.read,
            write: rec.attack.write,
            gain: rec.attack.gain,
            labeling,
            window_end: *pre.times.last().expect("non-empty window"),
        },
    })
}

/// Re-derives every viable sample of a finished sweep from its persisted
/// trajectories.
pub fn samples_from_sweep(
    dir: &std::path::Path,
    pre_window: f64,
    cfg: &LabelerConfig,
) -> Result<Vec<ShedSample>> {
    let mut out = Vec::new();
    for rec in super::sweep::load_records(dir)? {
        if !rec.viability.is_viable() {
            continue;
        }
        let Some(path) = super::sweep::trajectory_path(dir, &rec) else {
            continue;
        };
        let traj = Trajectory::load_binary(&path)?;
        out.push(make_sample(&traj, &rec, pre_window, cfg)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_case_has_sixty_channels() {
        let m = crate::grid::reference_case();
        let ch = dataset_channels(&m);
        assert_eq!(ch.len(), 60);
        assert_eq!(ch[0], "V_1");
        assert_eq!(ch[14], "theta_1");
        assert_eq!(ch[28], "omega_g1");
        assert_eq!(ch[59], "QL_14");
        let names = crate::sim::channel_names(&m);
        assert!(ch.iter().all(|c| names.contains(c)));
    }
}
