use super::sample::{dataset_channels, make_sample};
use super::viability::{viability_filter, Viability};
use crate::attack::{enumerate_attacks, AttackSpec, AttackVar};
use crate::error::{Error, Result};
use crate::labeler::{Label, LabelerConfig};
use crate::search::{calibrate_gain, GainPolicy};
use crate::sim::{simulate_from, Equilibrium, ScenarioConfig, ShedEvent, Trajectory};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub read_vars: Vec<AttackVar>,
    pub write_vars: Vec<AttackVar>,
    /// Stop the catalog once this many attacks have been calibrated.
    pub max_attacks: Option<usize>,
    /// Load indices to shed; all loads when absent.
    pub loads: Option<Vec<usize>>,
    pub policy: GainPolicy,
    /// Attack onset to shed (s).
    pub shed_delay: f64,
    /// Simulated time after the shed (s).
    pub post_shed: f64,
    /// Length of the pre-shed sample window (s).
    pub pre_window: f64,
    pub seed: u64,
    pub labeler: LabelerConfig,
    /// Persisted and sampled channels; the standard 60-channel set when absent.
    pub channels: Option<Vec<String>>,
    pub scenario: ScenarioConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            read_vars: vec![
                AttackVar::Omega,
                AttackVar::V,
                AttackVar::Pg,
                AttackVar::Qg,
                AttackVar::Eqp,
                AttackVar::Edp,
            ],
            write_vars: AttackVar::ALL.to_vec(),
            max_attacks: None,
            loads: None,
            policy: GainPolicy::default(),
            shed_delay: crate::sim::DEFAULT_SHED_DELAY,
            post_shed: 200.0,
            pre_window: 10.0,
            seed: 0,
            labeler: LabelerConfig::default(),
            channels: None,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.read_vars.is_empty() || self.write_vars.is_empty() {
            return Err(Error::config("attack catalogs must be non-empty"));
        }
        if !(self.shed_delay >= self.pre_window && self.pre_window > 0.0 && self.post_shed > 0.0) {
            return Err(Error::config(
                "need 0 < pre_window <= shed_delay and post_shed > 0",
            ));
        }
        self.labeler.validate()
    }

    pub fn load_list(&self, n_load: usize) -> Result<Vec<usize>> {
        let loads = self.loads.clone().unwrap_or_else(|| (0..n_load).collect());
        if loads.is_empty() {
            return Err(Error::config("load list is empty"));
        }
        if let Some(&bad) = loads.iter().find(|&&l| l >= n_load) {
            return Err(Error::UnknownLoad(bad));
        }
        Ok(loads)
    }

    pub fn channel_list(&self, eq: &Equilibrium) -> Vec<String> {
        self.channels
            .clone()
            .unwrap_or_else(|| dataset_channels(&eq.model))
    }

    fn scenario_for(&self, attack: &AttackSpec, load_index: usize) -> ScenarioConfig {
        let t_shed = attack.t_on + self.shed_delay;
        ScenarioConfig {
            t_end: t_shed + self.post_shed,
            attack: Some(attack.clone()),
            shed: Some(ShedEvent {
                t: t_shed,
                load_index,
            }),
            ..self.scenario.clone()
        }
    }
}

/// Candidate attacks in seeded random order, each with its calibrated gain;
/// candidates that no gain within the policy range destabilizes are
/// dropped. Calibration runs in parallel but the result only depends on the
/// seed.
pub fn attack_catalog(eq: &Equilibrium, cfg: &SweepConfig) -> Result<Vec<AttackSpec>> {
    let mut candidates = enumerate_attacks(&eq.model, &cfg.read_vars, &cfg.write_vars, 1.0)?;
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let want = cfg.max_attacks.unwrap_or(usize::MAX);
    let chunk = rayon::current_num_threads().max(1) * 4;
    let mut out = Vec::new();
    for batch in candidates.chunks(chunk) {
        let gains: Vec<Option<f64>> = batch
            .par_iter()
            .map(|a| calibrate_gain(eq, a, &cfg.policy))
            .collect();
        for (a, k) in batch.iter().zip(gains) {
            if let Some(k) = k {
                out.push(a.with_gain(k));
                if out.len() == want {
                    return Ok(out);
                }
            }
        }
    }
    Ok(out)
}

/// Outcome of one (attack, load) simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub attack: AttackSpec,
    pub load_index: usize,
    pub t_shed: f64,
    pub end_time: f64,
    pub terminated_early: Option<String>,
    pub viability: Viability,
    pub label: Option<Label>,
    /// Trajectory file relative to the sweep directory.
    pub trajectory: Option<String>,
    /// Set when the scenario could not be run at all.
    pub error: Option<String>,
}

pub fn scenario_id(attack: &AttackSpec, load_index: usize) -> String {
    format!(
        "{}{}-{}{}-k{:+.6e}-L{}",
        attack.read.var,
        attack.read.node,
        attack.write.var,
        attack.write.node,
        attack.gain,
        load_index
    )
}

/// Simulates one scenario and labels it if viable. The returned trajectory
/// holds only the sweep's channels.
pub fn run_scenario(
    eq: &Equilibrium,
    attack: &AttackSpec,
    load_index: usize,
    cfg: &SweepConfig,
    channels: &[String],
) -> (ScenarioRecord, Option<Trajectory>) {
    let sc = cfg.scenario_for(attack, load_index);
    let t_shed = sc.shed.map(|s| s.t).unwrap_or(f64::NAN);
    let mut rec = ScenarioRecord {
        id: scenario_id(attack, load_index),
        attack: attack.clone(),
        load_index,
        t_shed,
        end_time: 0.0,
        terminated_early: None,
        viability: Viability::Viable,
        label: None,
        trajectory: None,
        error: None,
    };
    let traj = match simulate_from(eq, &sc).and_then(|t| t.select(channels)) {
        Ok(t) => t,
        Err(e) => {
            rec.error = Some(e.to_string());
            rec.viability = Viability::rejected_other(e.to_string());
            return (rec, None);
        }
    };
    rec.end_time = traj.end_time();
    rec.terminated_early = traj.terminated_early.clone();
    rec.viability = viability_filter(&traj, cfg.labeler.min_duration);
    if rec.viability.is_viable() {
        match make_sample(&traj, &rec, cfg.pre_window, &cfg.labeler) {
            Ok(s) => rec.label = Some(s.meta.labeling),
            Err(e) => rec.viability = Viability::rejected_other(e.to_string()),
        }
    }
    (rec, Some(traj))
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    /// One record per (attack, load), in catalog order.
    pub records: Vec<ScenarioRecord>,
    pub newly_run: usize,
    pub resumed: usize,
}

impl SweepSummary {
    pub fn n_viable(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.viability.is_viable())
            .count()
    }
}

fn read_records(path: &Path) -> Result<HashMap<String, ScenarioRecord>> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        // A torn final line from an interrupted run is simply rerun.
        if let Ok(r) = serde_json::from_str::<ScenarioRecord>(&line) {
            out.insert(r.id.clone(), r);
        }
    }
    Ok(out)
}

pub fn load_records(dir: &Path) -> Result<Vec<ScenarioRecord>> {
    let mut recs: Vec<ScenarioRecord> = read_records(&dir.join(RECORDS_FILE))?
        .into_values()
        .collect();
    recs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(recs)
}

pub fn trajectory_path(dir: &Path, rec: &ScenarioRecord) -> Option<PathBuf> {
    rec.trajectory.as_ref().map(|t| dir.join(t))
}

/// Runs every (attack, load) pair, persisting each trajectory and appending
/// a record line as scenarios finish. Scenarios already recorded in `dir`
/// are skipped, so an interrupted sweep can be rerun to completion.
pub fn run_sweep(
    eq: &Equilibrium,
    attacks: &[AttackSpec],
    loads: &[usize],
    cfg: &SweepConfig,
    dir: &Path,
) -> Result<SweepSummary> {
    cfg.validate()?;
    if attacks.is_empty() || loads.is_empty() {
        return Err(Error::config("attack and load lists must be non-empty"));
    }
    fs::create_dir_all(dir.join(TRAJECTORY_DIR))?;
    fs::write(
        dir.join("sweep_config.json"),
        serde_json::to_vec_pretty(cfg)?,
    )?;
    fs::write(
        dir.join("attacks.json"),
        serde_json::to_vec_pretty(attacks)?,
    )?;
    let channels = cfg.channel_list(eq);

    let records_path = dir.join(RECORDS_FILE);
    let done = read_records(&records_path)?;
    let plan: Vec<(String, &AttackSpec, usize)> = attacks
        .iter()
        .flat_map(|a| loads.iter().map(move |&l| (scenario_id(a, l), a, l)))
        .collect();
    let todo: Vec<&(String, &AttackSpec, usize)> = plan
        .iter()
        .filter(|(id, _, _)| !done.contains_key(id))
        .collect();
    log::info!(
        "sweep: {} scenarios, {} already recorded",
        plan.len(),
        plan.len() - todo.len()
    );

    let sink = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)?,
    );
    let fresh: Vec<ScenarioRecord> = todo
        .par_iter()
        .map(|(_, attack, load)| -> Result<ScenarioRecord> {
            let (mut rec, traj) = run_scenario(eq, attack, *load, cfg, &channels);
            if let Some(traj) = traj {
                let rel = format!("{TRAJECTORY_DIR}/{}.traj", rec.id);
                traj.save_binary(&dir.join(&rel))?;
                rec.trajectory = Some(rel);
            }
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            let mut f = sink.lock().expect("record sink poisoned");
            f.write_all(line.as_bytes())?;
            f.flush()?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let newly_run = fresh.len();
    let mut by_id = done;
    for r in fresh {
        by_id.insert(r.id.clone(), r);
    }
    let records = plan
        .iter()
        .map(|(id, _, _)| {
            by_id
                .remove(id)
                .expect("every planned scenario has a record")
        })
        .collect();
    Ok(SweepSummary {
        records,
        newly_run,
        resumed: plan.len() - newly_run,
    })
}
