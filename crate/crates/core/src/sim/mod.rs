//! Time-domain simulation of the grid DAE with attack activation and load
//! shedding events.

mod equilibrium;
mod integrator;
mod trajectory;

pub use equilibrium::{find_equilibrium, find_equilibrium_with, Equilibrium};
pub use integrator::{
    jacobian, jacobian_central, solve_algebraic, DaeSystem, NewtonOptions, Trapezoid,
};
pub use trajectory::{channel_class, ChannelClass, Event, Trajectory};

use crate::attack::{ArmedAttack, AttackSpec};
use crate::error::{Error, Result};
use crate::grid::{machine_outputs, residuals_unchecked, GridModel, LoadDemand};
use serde::{Deserialize, Serialize};

/// Seconds between attack activation and the default shed time.
pub const DEFAULT_SHED_DELAY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShedEvent {
    pub t: f64,
    pub load_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub t_end: f64,
    pub dt: f64,
    pub record_rate: f64,
    pub attack: Option<AttackSpec>,
    pub shed: Option<ShedEvent>,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            t_end: 210.0,
            dt: 0.01,
            record_rate: 20.0,
            attack: None,
            shed: None,
            newton_tol: 1e-10,
            newton_max_iters: 20,
        }
    }
}

impl ScenarioConfig {
    /// Attack at `t_on`, shed `load_index` ten seconds later.
    pub fn attack_then_shed(attack: AttackSpec, load_index: usize) -> Self {
        let t = attack.t_on + DEFAULT_SHED_DELAY;
        ScenarioConfig {
            attack: Some(attack),
            shed: Some(ShedEvent { t, load_index }),
            ..Default::default()
        }
    }

    fn steps_per_record(&self) -> Result<usize> {
        let ratio = 1.0 / (self.record_rate * self.dt);
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio.max(1.0) || k < 1.0 {
            return Err(Error::config(
                "record period must be a whole multiple of dt (0 < dt <= 1/record_rate)",
            ));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.record_rate > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::config("dt, record_rate and t_end must be positive"));
        }
        self.steps_per_record()?;
        if let Some(s) = &self.shed {
            if !(s.t < self.t_end) || s.t < 0.0 {
                return Err(Error::config("shed time must lie in [0, t_end)"));
            }
        }
        if self.newton_max_iters == 0 || !(self.newton_tol > 0.0) {
            return Err(Error::config("invalid Newton settings"));
        }
        Ok(())
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iters: self.newton_max_iters,
        }
    }
}

/// The grid equations with the current exogenous inputs bound.
pub struct GridDae<'a> {
    pub model: &'a GridModel,
    pub loads: &'a LoadDemand,
    pub attack: Option<&'a ArmedAttack>,
}

impl DaeSystem for GridDae<'_> {
    fn dim(&self) -> usize {
        self.model.layout().len()
    }

    fn n_differential(&self) -> usize {
        self.model.layout().n_differential()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        residuals_unchecked(self.model, x, self.loads, out);
        if let Some(a) = self.attack {
            a.inject(self.model, x, self.loads, t, out);
        }
    }
}

/// Zeroes the demand of one load.
/// Zeroes one load. Returns whether the demand changed.
pub fn apply_shed(model: &GridModel, loads: &mut LoadDemand, load_index: usize) -> Result<bool> {
    if load_index >= model.n_load() {
        return Err(Error::UnknownLoad(load_index));
    }
    let changed = loads.p[load_index] != 0.0 || loads.q[load_index] != 0.0;
    loads.p[load_index] = 0.0;
    loads.q[load_index] = 0.0;
    Ok(changed)
}

/// Names of every recorded channel: the state vector followed by load
/// demands and machine electrical outputs.
pub fn channel_names(model: &GridModel) -> Vec<String> {
    let mut names = model.layout().names().to_vec();
    for l in &model.loads {
        names.push(format!("PL_{}", model.buses[l.bus].id));
    }
    for l in &model.loads {
        names.push(format!("QL_{}", model.buses[l.bus].id));
    }
    for g in &model.generators {
        names.push(format!("PG_g{}", model.buses[g.machine.bus].id));
    }
    for g in &model.generators {
        names.push(format!("QG_g{}", model.buses[g.machine.bus].id));
    }
    names
}

fn channel_values(model: &GridModel, x: &[f64], loads: &LoadDemand, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(x);
    out.extend_from_slice(&loads.p);
    out.extend_from_slice(&loads.q);
    let outputs: Vec<_> = (0..model.n_gen())
        .map(|g| machine_outputs(model, x, g))
        .collect();
    out.extend(outputs.iter().map(|o| o.p_g));
    out.extend(outputs.iter().map(|o| o.q_g));
}

/// Stateful simulator. Time only moves when [`Simulator::advance_to`] is
/// called, so callers can interleave their own decisions (e.g. a shed).
pub struct Simulator {
    model: GridModel,
    x: Vec<f64>,
    loads: LoadDemand,
    attack: Option<ArmedAttack>,
    attack_step: Option<usize>,
    shed: Option<(usize, usize)>,
    step: usize,
    dt: f64,
    steps_per_record: usize,
    stepper: Trapezoid,
    newton: NewtonOptions,
    traj: Trajectory,
    scratch: Vec<f64>,
}

impl Simulator {
    pub fn new(eq: &Equilibrium, cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let model = eq.model.clone();
        let loads = LoadDemand::from_model(&model);
        let dt = cfg.dt;
        let (attack, attack_step) = match &cfg.attack {
            Some(spec) => (
                Some(ArmedAttack::new(&model, spec)?),
                Some((spec.t_on / dt).round() as usize),
            ),
            None => (None, None),
        };
        let shed = match cfg.shed {
            Some(s) => {
                if s.load_index >= model.n_load() {
                    return Err(Error::UnknownLoad(s.load_index));
                }
                Some(((s.t / dt).round() as usize, s.load_index))
            }
            None => None,
        };
        let channels = channel_names(&model);
        let mut eq_values = Vec::new();
        channel_values(&model, &eq.state.values, &loads, &mut eq_values);
        let traj = Trajectory::new(channels, eq_values);
        let mut sim = Simulator {
            x: eq.state.values.clone(),
            loads,
            attack,
            attack_step,
            shed,
            step: 0,
            dt,
            steps_per_record: cfg.steps_per_record()?,
            stepper: Trapezoid::new(cfg.newton()),
            newton: cfg.newton(),
            traj,
            scratch: Vec::new(),
            model,
        };
        sim.on_step_reached()?;
        Ok(sim)
    }

    pub fn model(&self) -> &GridModel {
        &self.model
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn loads(&self) -> &LoadDemand {
        &self.loads
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    pub fn is_terminated(&self) -> bool {
        self.traj.terminated_early.is_some()
    }

    /// Handles events due at the current step, then records.
    fn on_step_reached(&mut self) -> Result<()> {
        let t = self.time();
        let mut discontinuity = false;
        if self.attack_step == Some(self.step) {
            if let Some(a) = self.attack.as_mut() {
                a.arm(&self.model, &self.x, &self.loads);
                self.traj.events.push(Event::new("attack", t, None));
                discontinuity = true;
            }
        }
        if let Some((s, load)) = self.shed {
            if s == self.step {
                discontinuity |= apply_shed(&self.model, &mut self.loads, load)?;
                self.traj.events.push(Event::new("shed", t, Some(load)));
            }
        }
        if discontinuity {
            self.resolve_algebraic(t)?;
        }
        if self.step.is_multiple_of(self.steps_per_record) {
            self.record(t);
        }
        Ok(())
    }

    fn resolve_algebraic(&mut self, t: f64) -> Result<()> {
        self.stepper.invalidate();
        let dae = GridDae {
            model: &self.model,
            loads: &self.loads,
            attack: self.attack.as_ref(),
        };
        solve_algebraic(&dae, &mut self.x, t, &self.newton)
    }

    fn record(&mut self, t: f64) {
        channel_values(&self.model, &self.x, &self.loads, &mut self.scratch);
        self.traj.push(t, &self.scratch);
    }

    /// Advances until the simulated time reaches `t_target` (rounded to the
    /// step grid). Integration failure ends the run and is reported through
    /// `terminated_early`, not as an error.
    pub fn advance_to(&mut self, t_target: f64) {
        let target = (t_target / self.dt - 1e-9).ceil().max(0.0) as usize;
        while self.step < target && !self.is_terminated() {
            let t = self.time();
            let dae = GridDae {
                model: &self.model,
                loads: &self.loads,
                attack: self.attack.as_ref(),
            };
            let next = self.stepper.step(&dae, &self.x, t, self.dt);
            match next {
                Ok(x) if x.iter().all(|v| v.is_finite()) => {
                    self.x = x;
                    self.step += 1;
                    if let Err(e) = self.on_step_reached() {
                        self.traj.terminated_early = Some(format!("integrator: {e}"));
                    }
                }
                Ok(_) => {
                    self.traj.terminated_early =
                        Some(format!("integrator: non-finite state at t = {t:.4}"));
                }
                Err(e) => {
                    self.traj.terminated_early = Some(format!("integrator: {e}"));
                }
            }
        }
    }

    /// Sheds a load at the current time. The algebraic states are re-solved
    /// and the sample at the current time, if one was recorded, is replaced
    /// by the post-shed values.
    pub fn shed_now(&mut self, load_index: usize) -> Result<()> {
        if load_index >= self.model.n_load() {
            return Err(Error::UnknownLoad(load_index));
        }
        let t = self.time();
        let changed = apply_shed(&self.model, &mut self.loads, load_index)?;
        self.traj
            .events
            .push(Event::new("shed", t, Some(load_index)));
        if !changed {
            return Ok(());
        }
        if let Err(e) = self.resolve_algebraic(t) {
            self.traj.terminated_early = Some(format!("integrator: {e}"));
            return Ok(());
        }
        if self.traj.times.last() == Some(&t) {
            self.traj.pop();
            self.record(t);
        }
        Ok(())
    }
}

impl Simulator {
    /// Changes one load's demand at the current time, logged as a
    /// `load_step` event.
    pub fn set_demand(&mut self, load_index: usize, p: f64, q: f64) -> Result<()> {
        if load_index >= self.model.n_load() {
            return Err(Error::UnknownLoad(load_index));
        }
        let t = self.time();
        self.loads.p[load_index] = p;
        self.loads.q[load_index] = q;
        self.traj
            .events
            .push(Event::new("load_step", t, Some(load_index)));
        self.resolve_algebraic(t)
    }
}

/// Integrates `scenario` from the equilibrium of `model`.
pub fn simulate(model: &GridModel, scenario: &ScenarioConfig) -> Result<Trajectory> {
    let eq = find_equilibrium(model)?;
    simulate_from(&eq, scenario)
}

/// Like [`simulate`] with a precomputed equilibrium.
pub fn simulate_from(eq: &Equilibrium, scenario: &ScenarioConfig) -> Result<Trajectory> {
    let mut sim = match Simulator::new(eq, scenario) {
        Ok(s) => s,
        Err(Error::NewtonFailed { .. }) => {
            // Event at t = 0 could not be made consistent.
            let mut traj = Trajectory::new(channel_names(&eq.model), Vec::new());
            traj.terminated_early = Some("integrator: inconsistent initial event".into());
            return Ok(traj);
        }
        Err(e) => return Err(e),
    };
    sim.advance_to(scenario.t_end);
    Ok(sim.into_trajectory())
}

#[cfg(test)]
mod tests;
