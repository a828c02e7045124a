//! Interactive scenario sessions: the simulator advances only when asked,
//! the detector watches every voltage and speed channel, and the operator
//! chooses which load to shed.

use gridshed::attack::AttackSpec;
use gridshed::classifier::{recommend, InputScaling, Params, Recommendation};
use gridshed::dataset::{viability_filter, Viability};
use gridshed::labeler::{label_after_shed, Label, LabelerConfig};
use gridshed::mpa::{AlarmState, PronyConfig, DETECT_CLASSES};
use gridshed::sim::{
    channel_class, Equilibrium, Event, ScenarioConfig, ShedEvent, Simulator, DEFAULT_SHED_DELAY,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Longest single step a client may request (s).
pub const MAX_STEP: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Running,
    AwaitingDecision,
    Finished,
}

/// Shared, read-only configuration of every session.
pub struct Engine {
    pub eq: Equilibrium,
    pub prony: PronyConfig,
    pub labeler: LabelerConfig,
    pub classifier: Option<(Params, InputScaling)>,
    pub tau: f64,
    /// Seconds after attack onset at which a decision is requested even
    /// without an alarm.
    pub decision_delay: f64,
    /// Simulated seconds after a shed before the outcome is labeled.
    pub post_shed: f64,
}

impl Engine {
    pub fn new(eq: Equilibrium) -> Self {
        Engine {
            eq,
            prony: PronyConfig::default(),
            labeler: LabelerConfig::default(),
            classifier: None,
            tau: 0.5,
            decision_delay: DEFAULT_SHED_DELAY,
            post_shed: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Step { seconds: f64 },
    Shed { load_index: usize },
}

/// Everything needed to rebuild a session by replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub attack: AttackSpec,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    BadRequest(String),
    Conflict(String),
    Unavailable(String),
    Internal(String),
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionError::BadRequest(m)
            | SessionError::Conflict(m)
            | SessionError::Unavailable(m)
            | SessionError::Internal(m) => f.write_str(m),
        }
    }
}

type SResult<T> = Result<T, SessionError>;

fn internal(e: impl std::fmt::Display) -> SessionError {
    SessionError::Internal(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub id: String,
    pub status: Status,
    pub time: f64,
    pub attack: AttackSpec,
    pub sheds: Vec<ShedEvent>,
    pub alarm_time: Option<f64>,
    pub terminated_early: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub id: String,
    pub status: Status,
    pub time: f64,
    pub events: Vec<Event>,
    pub times: Vec<f64>,
    pub channels: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAlarmView {
    pub alarmed: bool,
    pub alarm_time: Option<f64>,
    pub windows_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmView {
    pub id: String,
    pub time: f64,
    pub alarmed: bool,
    pub alarm_time: Option<f64>,
    /// Channel that alarmed first (ties broken by name).
    pub first_channel: Option<String>,
    pub channels: BTreeMap<String, ChannelAlarmView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationView {
    pub id: String,
    /// Simulated time of the last sample in the scored window.
    pub time: f64,
    pub tau: f64,
    pub recommendations: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub id: String,
    pub time: f64,
    pub ready: bool,
    pub shed: Option<ShedEvent>,
    pub post_shed_seconds: Option<f64>,
    pub viability: Option<Viability>,
    pub label: Option<Label>,
}

pub struct Session {
    record: SessionRecord,
    sim: Simulator,
    alarms: BTreeMap<String, AlarmState>,
    fed: usize,
    status: Status,
    sheds: Vec<ShedEvent>,
    recommendations: Option<RecommendationView>,
}

impl Session {
    pub fn new(engine: &Engine, id: String, attack: AttackSpec) -> SResult<Self> {
        if !(attack.t_on >= 0.0) || !attack.gain.is_finite() {
            return Err(SessionError::BadRequest(
                "attack needs a finite gain and t_on >= 0".into(),
            ));
        }
        let cfg = ScenarioConfig {
            attack: Some(attack.clone()),
            t_end: f64::MAX,
            ..Default::default()
        };
        let sim = Simulator::new(&engine.eq, &cfg)
            .map_err(|e| SessionError::BadRequest(e.to_string()))?;
        if (1.0 / cfg.record_rate - engine.prony.sample_dt).abs() > 1e-9 {
            return Err(SessionError::Internal(
                "detector sample period differs from the record period".into(),
            ));
        }
        let alarms = sim
            .trajectory()
            .channels
            .iter()
            .filter(|c| DETECT_CLASSES.contains(&channel_class(c)))
            .map(|c| (c.clone(), AlarmState::new()))
            .collect();
        let mut s = Session {
            record: SessionRecord {
                id,
                attack,
                actions: Vec::new(),
            },
            sim,
            alarms,
            fed: 0,
            status: Status::Running,
            sheds: Vec::new(),
            recommendations: None,
        };
        s.feed_detector(engine)?;
        Ok(s)
    }

    /// Rebuilds a session by replaying its recorded actions.
    pub fn replay(engine: &Engine, record: &SessionRecord) -> SResult<Self> {
        let mut s = Session::new(engine, record.id.clone(), record.attack.clone())?;
        for a in &record.actions {
            match *a {
                Action::Step { seconds } => s.step(engine, seconds)?,
                Action::Shed { load_index } => s.shed(engine, load_index)?,
            }
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn trajectory(&self) -> &gridshed::sim::Trajectory {
        self.sim.trajectory()
    }

    fn feed_detector(&mut self, engine: &Engine) -> SResult<()> {
        let traj = self.sim.trajectory();
        let n = traj.len();
        if n > self.fed {
            let times = &traj.times[self.fed..n];
            for (name, st) in self.alarms.iter_mut() {
                let col = traj.channel(name).expect("watched channel exists");
                st.update(times, &col[self.fed..n], &engine.prony)
                    .map_err(internal)?;
            }
            self.fed = n;
        }
        Ok(())
    }

    fn alarm_time(&self) -> Option<f64> {
        self.alarms
            .values()
            .filter_map(|a| a.alarm_time)
            .reduce(f64::min)
    }

    fn post_shed(&self) -> Option<f64> {
        self.sheds.first().map(|s| self.time() - s.t)
    }

    fn update_status(&mut self, engine: &Engine) {
        if self.status == Status::Finished {
            return;
        }
        let done = self.sim.is_terminated()
            || self
                .post_shed()
                .is_some_and(|p| p + 1e-9 >= engine.post_shed);
        if done {
            self.status = Status::Finished;
        } else if self.sheds.is_empty() {
            let due = self.time() + 1e-9 >= self.record.attack.t_on + engine.decision_delay;
            if self.alarm_time().is_some() || due {
                self.status = Status::AwaitingDecision;
            }
        }
    }

    pub fn step(&mut self, engine: &Engine, seconds: f64) -> SResult<()> {
        if !(seconds > 0.0 && seconds <= MAX_STEP) {
            return Err(SessionError::BadRequest(format!(
                "seconds must lie in (0, {MAX_STEP}]"
            )));
        }
        if self.status == Status::Finished {
            return Err(SessionError::Conflict("session is finished".into()));
        }
        let target = self.time() + seconds;
        self.sim.advance_to(target);
        self.feed_detector(engine)?;
        self.record.actions.push(Action::Step { seconds });
        self.update_status(engine);
        Ok(())
    }

    pub fn shed(&mut self, engine: &Engine, load_index: usize) -> SResult<()> {
        if load_index >= engine.eq.model.n_load() {
            return Err(SessionError::BadRequest(format!(
                "load_index must be below {}",
                engine.eq.model.n_load()
            )));
        }
        if self.status != Status::AwaitingDecision {
            return Err(SessionError::Conflict(format!(
                "a shed decision needs status awaiting-decision, not {}",
                serde_json::to_value(self.status).expect("status serializes")
            )));
        }
        let t = self.time();
        self.sim.shed_now(load_index).map_err(internal)?;
        self.sheds.push(ShedEvent { t, load_index });
        self.record.actions.push(Action::Shed { load_index });
        self.status = Status::Running;
        self.update_status(engine);
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        Summary {
            id: self.record.id.clone(),
            status: self.status,
            time: self.time(),
            attack: self.record.attack.clone(),
            sheds: self.sheds.clone(),
            alarm_time: self.alarm_time(),
            terminated_early: self.sim.trajectory().terminated_early.clone(),
        }
    }

    /// Samples at or after `from`, optionally restricted to `channels`.
    pub fn state(&self, from: f64, channels: Option<&[String]>) -> SResult<StateView> {
        let traj = self.sim.trajectory();
        let start = traj.times.partition_point(|&t| t < from - 1e-9);
        let mut out = BTreeMap::new();
        for (c, name) in traj.channels.iter().enumerate() {
            if channels.is_some_and(|want| !want.contains(name)) {
                continue;
            }
            out.insert(name.clone(), traj.samples[c][start..].to_vec());
        }
        if let Some(want) = channels {
            if let Some(missing) = want.iter().find(|w| !out.contains_key(*w)) {
                return Err(SessionError::BadRequest(format!(
                    "unknown channel {missing}"
                )));
            }
        }
        Ok(StateView {
            id: self.record.id.clone(),
            status: self.status,
            time: self.time(),
            events: traj.events.clone(),
            times: traj.times[start..].to_vec(),
            channels: out,
        })
    }

    pub fn alarm(&self) -> AlarmView {
        let alarm_time = self.alarm_time();
        let first_channel = alarm_time.and_then(|t0| {
            self.alarms
                .iter()
                .find(|(_, a)| a.alarm_time == Some(t0))
                .map(|(n, _)| n.clone())
        });
        AlarmView {
            id: self.record.id.clone(),
            time: self.time(),
            alarmed: alarm_time.is_some(),
            alarm_time,
            first_channel,
            channels: self
                .alarms
                .iter()
                .map(|(n, a)| {
                    (
                        n.clone(),
                        ChannelAlarmView {
                            alarmed: a.alarmed,
                            alarm_time: a.alarm_time,
                            windows_evaluated: a.windows_evaluated,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Per-load shed scores from the most recent window, cached per
    /// simulated time.
    pub fn recommendations(&mut self, engine: &Engine) -> SResult<RecommendationView> {
        let Some((params, scaling)) = &engine.classifier else {
            return Err(SessionError::Unavailable(
                "no classifier weights loaded".into(),
            ));
        };
        let traj = self.sim.trajectory();
        let stamp = *traj
            .times
            .last()
            .expect("trajectory has the initial sample");
        if let Some(c) = &self.recommendations {
            if c.time == stamp {
                return Ok(c.clone());
            }
        }
        if traj.len() < params.arch.steps {
            return Err(SessionError::Conflict(format!(
                "need {} samples for a recommendation, have {}",
                params.arch.steps,
                traj.len()
            )));
        }
        let recs = recommend(params, scaling, traj, engine.tau).map_err(internal)?;
        let view = RecommendationView {
            id: self.record.id.clone(),
            time: stamp,
            tau: engine.tau,
            recommendations: recs,
        };
        self.recommendations = Some(view.clone());
        Ok(view)
    }

    pub fn outcome(&self, engine: &Engine) -> SResult<OutcomeView> {
        let shed = self.sheds.first().copied();
        let post = self.post_shed();
        let mut view = OutcomeView {
            id: self.record.id.clone(),
            time: self.time(),
            ready: false,
            shed,
            post_shed_seconds: post,
            viability: None,
            label: None,
        };
        if shed.is_none() || self.status != Status::Finished {
            return Ok(view);
        }
        let traj = self.sim.trajectory();
        let v = viability_filter(traj, engine.post_shed);
        if v.is_viable() {
            view.label = Some(label_after_shed(traj, &engine.labeler).map_err(internal)?);
        }
        view.viability = Some(v);
        view.ready = true;
        Ok(view)
    }
}
