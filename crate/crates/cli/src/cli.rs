use crate::service::{self, AppState, DATA_DIR_ENV};
use crate::session::Engine;
use clap::{Args, Parser, Subcommand};
use gridshed::attack::AttackSpec;
use gridshed::classifier::{
    default_tau_grid, evaluate, examples, threshold_sweep, train, Architecture, EpochStats,
    EvalReport, InputScaling, Params, ThresholdSweep, TrainConfig,
};
use gridshed::dataset::{
    attack_catalog, dataset_channels, distribution_report, read_dataset, run_sweep,
    samples_from_sweep, split_and_normalize, write_dataset, Dataset, SweepConfig,
};
use gridshed::grid::{load_case, reference_case, GridModel};
use gridshed::labeler::{label, label_after_shed, LabelerConfig};
use gridshed::mpa::{detect, PronyConfig, DETECT_CLASSES};
use gridshed::sim::{find_equilibrium, simulate_from, ScenarioConfig, ShedEvent, Trajectory};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit code 2.
    Usage(String),
    /// Failure while doing the work: exit code 1.
    Domain(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Domain(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one scenario and write its trajectory CSV.
    Simulate(SimulateArgs),
    /// Run the modal detector over a trajectory CSV.
    Detect(DetectArgs),
    /// Label a trajectory CSV STABLE or UNSTABLE.
    Label(LabelArgs),
    /// Calibrate an attack catalog and simulate attack/shed scenarios.
    Sweep(SweepArgs),
    /// Cut, label, split and normalize samples from a sweep.
    BuildDataset(BuildDatasetArgs),
    /// Label distribution of a dataset by load, read and write target.
    Report(ReportArgs),
    /// Train the classifier and pick the threshold on validation data.
    Train(TrainArgs),
    /// Evaluate saved weights on a dataset split.
    Eval(EvalArgs),
    /// Serve interactive scenario sessions over HTTP.
    Serve(ServeArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON file whose keys supply defaults for the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// `ieee14` or a case file path.
    #[arg(long)]
    pub case: Option<String>,
    /// Attack spec JSON file.
    #[arg(long)]
    pub attack: Option<PathBuf>,
    /// Shed the load at bus BUS at time T, written BUS@T.
    #[arg(long)]
    pub shed: Option<String>,
    /// End time in seconds.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Trajectory CSV to write; events go to a `.events.json` sidecar.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub scenario: Option<ScenarioConfig>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectArgs {
    /// Trajectory CSV.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub prony: Option<PronyConfig>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelArgs {
    /// Trajectory CSV; labeled from its shed event when it has one.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub labeler: Option<LabelerConfig>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    /// `ieee14` or a case file path.
    #[arg(long)]
    pub case: Option<String>,
    /// Output directory; rerunning resumes it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop calibrating once this many attacks destabilize the grid.
    #[arg(long)]
    pub max_attacks: Option<usize>,
    /// Seed for the attack order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildDatasetArgs {
    /// `ieee14` or a case file path.
    #[arg(long)]
    pub case: Option<String>,
    /// Sweep output directory.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Dataset directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the stratified split; the sweep seed when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory for the CSV tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Weights file to write (a `.json` manifest goes next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Stable precision the validation threshold must reach.
    #[arg(long)]
    pub target_precision: Option<f64>,
    /// Where to write the JSON training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(skip)]
    pub train: Option<TrainConfig>,
    #[arg(skip)]
    pub architecture: Option<Architecture>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Weights file written by `train`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Threshold on the unstable probability, in (0, 1); default 0.5.
    #[arg(long)]
    pub tau: Option<f64>,
    /// train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Where to write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeArgs {
    /// Listen port; default 8080.
    #[arg(long)]
    pub port: Option<u16>,
    /// Listen address; default 127.0.0.1.
    #[arg(long)]
    pub host: Option<String>,
    /// `ieee14` or a case file path.
    #[arg(long)]
    pub case: Option<String>,
    /// Weights file written by `train`; enables recommendations.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Threshold on the unstable probability, in (0, 1); default 0.5.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(skip)]
    pub prony: Option<PronyConfig>,
    #[arg(skip)]
    pub labeler: Option<LabelerConfig>,
}

/// Fills every flag left unset on the command line from the config file.
pub fn merge_config<T: Serialize + DeserializeOwned>(
    cli: T,
    config: Option<&Path>,
) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(cli);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    let mut base: Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {} is not JSON: {e}", path.display())))?;
    let Value::Object(map) = &mut base else {
        return Err(usage("config file must hold a JSON object"));
    };
    if let Value::Object(over) = serde_json::to_value(cli)? {
        for (k, v) in over {
            if !v.is_null() {
                map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref()
        .ok_or_else(|| usage(format!("--{flag} is required")))
}

pub fn load_model(case: Option<&str>) -> CliResult<GridModel> {
    match case.unwrap_or("ieee14") {
        "ieee14" => Ok(reference_case()),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("reading case {path}: {e}"))?;
            Ok(load_case(&text)?)
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes =
        std::fs::read(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    Ok(serde_json::from_slice(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")
            .map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Parses `BUS@T` into the shed event for the load at that bus.
pub fn parse_shed(model: &GridModel, s: &str) -> CliResult<ShedEvent> {
    let (bus, t) = s
        .split_once('@')
        .ok_or_else(|| usage(format!("--shed expects BUS@T, got {s:?}")))?;
    let bus: usize = bus
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad bus id in --shed {s:?}")))?;
    let t: f64 = t
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad time in --shed {s:?}")))?;
    let load_index = model
        .bus_index(bus)
        .and_then(|b| model.load_at(b))
        .ok_or_else(|| anyhow::anyhow!("bus {bus} has no load"))?;
    Ok(ShedEvent { t, load_index })
}

fn simulate_cmd(a: SimulateArgs) -> CliResult<()> {
    let out = required(&a.out, "out")?;
    let model = load_model(a.case.as_deref())?;
    let mut scenario = a.scenario.clone().unwrap_or_default();
    if let Some(path) = &a.attack {
        scenario.attack = Some(read_json::<AttackSpec>(path)?);
    }
    if let Some(s) = &a.shed {
        scenario.shed = Some(parse_shed(&model, s)?);
    }
    if let Some(t) = a.t_end {
        scenario.t_end = t;
    }
    let eq = find_equilibrium(&model)?;
    let traj = simulate_from(&eq, &scenario)?;
    traj.save(out)?;
    emit_json(
        &serde_json::json!({
            "samples": traj.len(),
            "end_time": traj.end_time(),
            "terminated_early": traj.terminated_early,
            "events": traj.events,
        }),
        None,
    )
}

fn load_trajectory(path: &Path) -> CliResult<Trajectory> {
    Trajectory::load(path)
        .map_err(|e| CliError::Domain(anyhow::anyhow!("reading {}: {e}", path.display())))
}

fn detect_cmd(a: DetectArgs) -> CliResult<()> {
    let traj = load_trajectory(required(&a.input, "in")?)?;
    let cfg = a.prony.clone().unwrap_or_default();
    let alarms = detect(&traj, &cfg, &DETECT_CLASSES)?;
    emit_json(&alarms, a.out.as_deref())
}

fn label_cmd(a: LabelArgs) -> CliResult<()> {
    let traj = load_trajectory(required(&a.input, "in")?)?;
    let cfg = a.labeler.clone().unwrap_or_default();
    let l = if traj.event("shed").is_some() {
        label_after_shed(&traj, &cfg)?
    } else {
        label(&traj, &cfg)?
    };
    emit_json(&l, a.out.as_deref())
}

fn sweep_cmd(a: SweepArgs) -> CliResult<()> {
    let out = required(&a.out, "out")?;
    let mut cfg = a.sweep.clone().unwrap_or_default();
    if a.max_attacks.is_some() {
        cfg.max_attacks = a.max_attacks;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let model = load_model(a.case.as_deref())?;
    let eq = find_equilibrium(&model)?;
    let t0 = std::time::Instant::now();
    let attacks = attack_catalog(&eq, &cfg)?;
    log::info!(
        "calibrated {} attacks in {:.1} s",
        attacks.len(),
        t0.elapsed().as_secs_f64()
    );
    let loads = cfg.load_list(eq.model.n_load())?;
    let s = run_sweep(&eq, &attacks, &loads, &cfg, out)?;
    emit_json(
        &serde_json::json!({
            "attacks": attacks.len(),
            "scenarios": s.records.len(),
            "newly_run": s.newly_run,
            "resumed": s.resumed,
            "viable": s.n_viable(),
            "seconds": t0.elapsed().as_secs_f64(),
        }),
        None,
    )
}

fn build_dataset_cmd(a: BuildDatasetArgs) -> CliResult<()> {
    let dir = required(&a.sweep, "sweep")?;
    let out = required(&a.out, "out")?;
    let cfg: SweepConfig = read_json(&dir.join("sweep_config.json"))?;
    let model = load_model(a.case.as_deref())?;
    let channels = cfg
        .channels
        .clone()
        .unwrap_or_else(|| dataset_channels(&model));
    let samples = samples_from_sweep(dir, cfg.pre_window, &cfg.labeler)?;
    let ds = split_and_normalize(
        samples,
        channels,
        model.n_load(),
        a.seed.unwrap_or(cfg.seed),
    )?;
    write_dataset(out, &ds)?;
    let counts: Vec<Value> = ds
        .manifest
        .splits()
        .iter()
        .map(|(name, info)| {
            serde_json::json!({"split": name, "stable": info.n_stable, "unstable": info.n_unstable})
        })
        .collect();
    emit_json(&serde_json::json!({ "out": out, "splits": counts }), None)
}

fn report_cmd(a: ReportArgs) -> CliResult<()> {
    let ds = read_dataset(required(&a.dataset, "dataset")?)?;
    let entries: Vec<_> = ds
        .manifest
        .splits()
        .iter()
        .flat_map(|(_, info)| info.samples.clone())
        .collect();
    let r = distribution_report(&entries);
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        r.write_csvs(out)?;
    }
    emit_json(
        &serde_json::json!({
            "samples": entries.len(),
            "max_load_stable_fraction": r.max_load_stable_fraction(),
            "by_load": r.by_load,
        }),
        None,
    )
}

fn scaling_of(ds: &Dataset) -> InputScaling {
    InputScaling {
        channels: ds.manifest.channels.clone(),
        mean: ds.manifest.mean.clone(),
        std: ds.manifest.std.clone(),
    }
}

#[derive(Serialize)]
struct TrainReport {
    best_epoch: usize,
    history: Vec<EpochStats>,
    threshold: ThresholdSweep,
    test: EvalReport,
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let dir = required(&a.dataset, "dataset")?;
    let out = required(&a.out, "out")?;
    let ds = read_dataset(dir)?;
    let mut cfg = a.train.clone().unwrap_or_default();
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    let target = a.target_precision.unwrap_or(0.95);
    let arch = a.architecture.clone().unwrap_or_else(|| {
        Architecture::reference(
            ds.manifest.channels.len(),
            ds.manifest.n_steps,
            ds.manifest.n_loads,
        )
    });
    let (tr, va, te) = (examples(&ds.train), examples(&ds.val), examples(&ds.test));
    let outcome = train(&tr, &va, &arch, &cfg)?;
    outcome.params.save_with(out, Some(&scaling_of(&ds)))?;
    let sweep = threshold_sweep(&outcome.params, &va, &default_tau_grid(), target)?;
    let tau = sweep.tau.unwrap_or(0.5);
    if sweep.tau.is_none() {
        log::warn!(
            "no threshold reaches stable precision {target} on validation; reporting tau = 0.5"
        );
    }
    let test = evaluate(&outcome.params, &te, tau)?;
    print!("{test}");
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        threshold: sweep,
        test,
    };
    let path = a.report.clone().unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".report.json");
        p.into()
    });
    emit_json(&report, Some(&path))
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    let tau = a.tau.unwrap_or(0.5);
    if !(tau > 0.0 && tau < 1.0) {
        return Err(usage("--tau must lie in (0, 1)"));
    }
    let params = Params::load(required(&a.weights, "weights")?)?;
    let ds = read_dataset(required(&a.dataset, "dataset")?)?;
    let split = match a.split.as_deref().unwrap_or("test") {
        "train" => &ds.train,
        "val" => &ds.val,
        "test" => &ds.test,
        other => return Err(usage(format!("unknown split {other:?}"))),
    };
    let r = evaluate(&params, &examples(split), tau)?;
    print!("{r}");
    if let Some(p) = &a.report {
        emit_json(&r, Some(p))?;
    } else {
        println!();
        emit_json(&r, None)?;
    }
    Ok(())
}

/// Session engine for `serve`.
pub fn build_engine(a: &ServeArgs) -> CliResult<Engine> {
    let model = load_model(a.case.as_deref())?;
    let mut engine = Engine::new(find_equilibrium(&model)?);
    if let Some(p) = &a.prony {
        engine.prony = p.clone();
    }
    if let Some(l) = &a.labeler {
        engine.labeler = l.clone();
    }
    if let Some(tau) = a.tau {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(usage("--tau must lie in (0, 1)"));
        }
        engine.tau = tau;
    }
    if let Some(w) = &a.weights {
        let (params, scaling) = Params::load_with(w)?;
        let scaling = scaling.ok_or_else(|| {
            anyhow::anyhow!(
                "{} carries no input scaling; retrain with `train`",
                w.display()
            )
        })?;
        if params.arch.n_loads != model.n_load() {
            return Err(anyhow::anyhow!(
                "weights expect {} loads, case has {}",
                params.arch.n_loads,
                model.n_load()
            )
            .into());
        }
        engine.classifier = Some((params, scaling));
    }
    Ok(engine)
}

fn serve_cmd(a: ServeArgs) -> CliResult<()> {
    let engine = build_engine(&a)?;
    let data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    let state = std::sync::Arc::new(AppState::new(engine, data_dir)?);
    let host = a.host.clone().unwrap_or_else(|| "127.0.0.1".into());
    let addr: std::net::SocketAddr = format!("{host}:{}", a.port.unwrap_or(8080))
        .parse()
        .map_err(|e| usage(format!("bad listen address: {e}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(state, addr))?;
    Ok(())
}

fn dispatch(cmd: Command, config: Option<&Path>) -> CliResult<()> {
    match cmd {
        Command::Simulate(a) => simulate_cmd(merge_config(a, config)?),
        Command::Detect(a) => detect_cmd(merge_config(a, config)?),
        Command::Label(a) => label_cmd(merge_config(a, config)?),
        Command::Sweep(a) => sweep_cmd(merge_config(a, config)?),
        Command::BuildDataset(a) => build_dataset_cmd(merge_config(a, config)?),
        Command::Report(a) => report_cmd(merge_config(a, config)?),
        Command::Train(a) => train_cmd(merge_config(a, config)?),
        Command::Eval(a) => eval_cmd(merge_config(a, config)?),
        Command::Serve(a) => serve_cmd(merge_config(a, config)?),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "gridshed",
    version,
    about = "Instability-attack load-shedding lab"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let root = match Cli::try_parse_from(argv) {
        Ok(r) => r,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(root.command, root.common.config.as_deref()) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
