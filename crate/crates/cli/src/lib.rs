//! Scenario runner: resolves a scenario (file or built-in preset), runs one of
//! the experiment designs and writes every artifact under
//! `<out>/<scenario>/<label>/`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use olfc_core::export::{format_number, write_message_log, write_oracle, write_trajectory, KeyValues};
use olfc_core::scenario::{preset_file, DampingEntry, ScenarioFile};
use olfc_core::sim::{reference_solution, steady_state_report, sweep, SweepEntry};
use olfc_core::{
    OlfcProblem, OlfcSolution, OracleError, Scenario, ScenarioError, SimError, SteadyStateReport,
    Trajectory, Verdict,
};
use thiserror::Error;

/// Fraction of samples treated as steady-state tail in every report.
pub const TAIL_FRACTION: f64 = 0.1;

/// Damping multipliers run by `damping-sweep` when no grid is given. The
/// end points lie outside the robust range on purpose.
pub const DEFAULT_K_GRID: [f64; 7] = [0.05, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0];

/// Multipliers whose blowup fails a sweep.
pub const ROBUST_K_RANGE: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioSource {
    File(PathBuf),
    Preset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Experiment {
    /// Same scenario with CHP constraints ignored (e1) and enforced (e2).
    CouplingComparison,
    /// Damping multiplier grid with a verdict table.
    DampingSweep,
    /// The scenario as written.
    #[default]
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::CouplingComparison => "coupling-comparison",
            Self::DampingSweep => "damping-sweep",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: ScenarioSource,
    pub out: PathBuf,
    pub experiment: Experiment,
    /// Overrides the scenario's trajectory decimation.
    pub decimation: Option<usize>,
    /// Overrides the scenario's communication seed.
    pub seed: Option<u64>,
    pub jobs: usize,
    /// Run directory name; a UTC timestamp when absent.
    pub label: Option<String>,
    /// Sweep grid; [`DEFAULT_K_GRID`] when absent.
    pub k_grid: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn new(source: ScenarioSource, out: impl Into<PathBuf>) -> Self {
        Self {
            source,
            out: out.into(),
            experiment: Experiment::Custom,
            decimation: None,
            seed: None,
            jobs: 1,
            label: None,
            k_grid: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{run}: {source}")]
    Simulation { run: String, source: SimError },
    #[error("sweep run k = {k} is unstable inside the robust range: {reason}")]
    UnstableSweep { k: f64, reason: String },
    #[error("oracle failed on {run}: {source}")]
    Oracle { run: String, source: OracleError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 1 parse/validation, 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Scenario(ScenarioError::Io { .. }) | Self::Io { .. } => 3,
            Self::Scenario(_) => 1,
            Self::Simulation { source: SimError::InvalidScenario(_), .. } => 1,
            Self::Simulation { .. } | Self::UnstableSweep { .. } | Self::Oracle { .. } => 2,
        }
    }
}

/// One simulated run inside an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub name: String,
    pub verdict: Verdict,
    pub report: Option<SteadyStateReport<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub runs: Vec<RunOutcome>,
}

/// Loads a scenario file or preset and applies the config overrides. Returns
/// the directory name used for the scenario and the resolved file.
pub fn resolve(config: &RunConfig) -> Result<(String, ScenarioFile), CliError> {
    let (name, mut file) = match &config.source {
        ScenarioSource::Preset(name) => (name.clone(), preset_file(name)?),
        ScenarioSource::File(path) => {
            let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let stem = path
                .file_stem()
                .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned());
            (stem, ScenarioFile::parse(&text)?)
        }
    };
    if let Some(d) = config.decimation {
        file.integrator.decimation = d;
    }
    if let Some(seed) = config.seed {
        file.comm.seed = seed;
    }
    Ok((name, file))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|()| w.flush()).map_err(io_err(path))
}

fn csv_io(e: impl std::error::Error + Send + Sync + 'static) -> io::Error {
    io::Error::other(e)
}

fn make_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn fmt(x: f64) -> String {
    format_number(x)
}

fn label(config: &RunConfig) -> String {
    config
        .label
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string())
}

/// Key-value report of one run. `oracle_file` is the path, relative to the
/// report, of the oracle solution the distances are measured against.
pub fn report_values(
    scenario: &Scenario<f64>,
    report: &SteadyStateReport<f64>,
    oracle_file: &str,
    oracle: &OlfcSolution<f64>,
    traj: &Trajectory<f64>,
) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("scenario", &scenario.name);
    kv.push("oracle_file", oracle_file);
    kv.push("verdict", report.verdict());
    kv.push("chp_enforced", scenario.options.chp_enforced);
    kv.push("max_tail_omega", fmt(report.max_tail_omega));
    kv.push("peak_omega", fmt(report.peak_omega));
    kv.push(
        "settling_time",
        report.settling_time.map_or_else(|| "none".to_string(), fmt),
    );
    kv.push("primal_distance", fmt(report.primal_distance));
    kv.push("objective", fmt(report.final_objective));
    kv.push("oracle_objective", fmt(report.oracle_objective));
    kv.push("kkt.stationarity", fmt(report.kkt.stationarity));
    kv.push("kkt.primal_infeasibility", fmt(report.kkt.primal_infeasibility));
    kv.push("kkt.dual_infeasibility", fmt(report.kkt.dual_infeasibility));
    kv.push("kkt.complementarity", fmt(report.kkt.complementarity));
    kv.push("absorption", fmt(report.absorption));
    let v = &report.violations;
    kv.push("violation.chp", format!("{:.4}", v.chp));
    kv.push("violation.chp_exact", fmt(v.chp));
    kv.push("violation.demand", fmt(v.demand_bounds));
    kv.push("violation.buffer", fmt(v.heat_buffer));
    kv.push("violation.line", fmt(v.line_flow));
    kv.push("min_multiplier", fmt(report.min_multiplier));
    kv.push("max_clamp", fmt(report.max_clamp));
    if let Some(l) = &report.lyapunov {
        kv.push("lyapunov.reference", format!("{:?}", l.source));
        kv.push("lyapunov.fixed_point_residual", fmt(l.fixed_point_residual));
        kv.push("lyapunov.checked_steps", l.checked_steps);
        kv.push("lyapunov.ascent_steps", l.violations);
        kv.push("lyapunov.descent_fraction", fmt(l.descent_fraction()));
        kv.push("lyapunov.max_increase", fmt(l.max_increase));
    }
    kv.push("steps", traj.diagnostics.steps);
    let last = traj.last();
    for (i, id) in traj.bus_ids.iter().enumerate() {
        kv.push(format!("d.{id}"), fmt(last.d[i]));
        kv.push(format!("d_star.{id}"), fmt(oracle.d[i]));
        kv.push(format!("q.{id}"), fmt(last.q[i]));
        kv.push(format!("q_star.{id}"), fmt(oracle.q[i]));
    }
    kv
}

fn write_report(dir: &Path, kv: &KeyValues) -> Result<(), CliError> {
    write_file(&dir.join("report.txt"), |w| kv.write_text(w))?;
    write_file(&dir.join("report.csv"), |w| kv.write_flat(w).map_err(csv_io))
}

fn write_resolved(dir: &Path, file: &ScenarioFile) -> Result<(), CliError> {
    write_file(&dir.join("scenario.resolved"), |w| w.write_all(file.to_toml().as_bytes()))
}

fn write_oracle_file(path: &Path, sol: &OlfcSolution<f64>, problem: &OlfcProblem<f64>) -> Result<(), CliError> {
    write_file(path, |w| write_oracle(sol, problem, w).map_err(csv_io))
}

fn write_trajectory_files(dir: &Path, traj: &Trajectory<f64>, scenario: &Scenario<f64>) -> Result<(), CliError> {
    write_file(&dir.join("trajectory.csv"), |w| write_trajectory(traj, w).map_err(csv_io))?;
    if let Some(log) = &traj.message_log {
        write_file(&dir.join("messages.csv"), |w| {
            write_message_log(log, &scenario.problem.topology, w).map_err(csv_io)
        })?;
    }
    Ok(())
}

fn oracle_for(scenario: &Scenario<f64>, run: &str) -> Result<OlfcSolution<f64>, CliError> {
    reference_solution(&scenario.controlled_problem()).map_err(|source| CliError::Oracle {
        run: run.to_string(),
        source,
    })
}

fn error_report(scenario: &Scenario<f64>, oracle_file: &str, error: &str) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("scenario", &scenario.name);
    kv.push("oracle_file", oracle_file);
    kv.push("verdict", Verdict::Unstable);
    kv.push("error", error);
    kv
}

/// Runs one scenario into `dir` with the full artifact set.
fn single_run(dir: &Path, name: &str, file: &ScenarioFile) -> Result<(RunOutcome, Option<Trajectory<f64>>), CliError> {
    make_dir(dir)?;
    write_resolved(dir, file)?;
    let scenario = file.build::<f64>()?;
    let oracle = oracle_for(&scenario, name)?;
    write_oracle_file(&dir.join("oracle.csv"), &oracle, &scenario.controlled_problem())?;
    match olfc_core::simulate(&scenario) {
        Ok(traj) => {
            write_trajectory_files(dir, &traj, &scenario)?;
            let report = steady_state_report(&traj, &scenario.controlled_problem(), &oracle, TAIL_FRACTION);
            write_report(dir, &report_values(&scenario, &report, "oracle.csv", &oracle, &traj))?;
            let outcome = RunOutcome {
                name: name.to_string(),
                verdict: report.verdict(),
                report: Some(report),
                error: None,
            };
            Ok((outcome, Some(traj)))
        }
        Err(source) => {
            write_report(dir, &error_report(&scenario, "oracle.csv", &source.to_string()))?;
            Err(CliError::Simulation {
                run: name.to_string(),
                source,
            })
        }
    }
}

fn coupling_comparison(dir: &Path, base: &ScenarioFile) -> Result<Vec<RunOutcome>, CliError> {
    let mut outcomes = Vec::new();
    let mut finals = Vec::new();
    for (tag, enforced) in [("e1", false), ("e2", true)] {
        let mut file = base.clone();
        file.controller.chp_enforced = enforced;
        let (outcome, traj) = single_run(&dir.join(tag), tag, &file)?;
        finals.push(traj.expect("completed runs keep their trajectory"));
        outcomes.push(outcome);
    }
    let mut kv = KeyValues::default();
    kv.push("experiment", Experiment::CouplingComparison.name());
    kv.push("scenario", &base.name);
    for (o, tag) in outcomes.iter().zip(["e1", "e2"]) {
        let r = o.report.as_ref().expect("completed runs have a report");
        kv.push(format!("{tag}.oracle_file"), format!("{tag}/oracle.csv"));
        kv.push(format!("{tag}.chp_enforced"), tag == "e2");
        kv.push(format!("{tag}.verdict"), o.verdict);
        kv.push(format!("{tag}.max_tail_omega"), fmt(r.max_tail_omega));
        kv.push(format!("{tag}.chp_violation"), format!("{:.4}", r.violations.chp));
        kv.push(format!("{tag}.primal_distance"), fmt(r.primal_distance));
        kv.push(format!("{tag}.objective"), fmt(r.final_objective));
    }
    let (a, b) = (finals[0].last(), finals[1].last());
    for (i, id) in finals[0].bus_ids.iter().enumerate() {
        kv.push(format!("e1.d.{id}"), fmt(a.d[i]));
        kv.push(format!("e2.d.{id}"), fmt(b.d[i]));
        kv.push(format!("diff.d.{id}"), fmt(a.d[i] - b.d[i]));
        kv.push(format!("e1.q.{id}"), fmt(a.q[i]));
        kv.push(format!("e2.q.{id}"), fmt(b.q[i]));
        kv.push(format!("diff.q.{id}"), fmt(a.q[i] - b.q[i]));
    }
    write_report(dir, &kv)?;
    Ok(outcomes)
}

fn k_dir(k: f64) -> String {
    format!("k-{k}")
}

fn damping_sweep(dir: &Path, base: &ScenarioFile, grid: &[f64], jobs: usize) -> Result<Vec<RunOutcome>, CliError> {
    let scenario = base.build::<f64>()?;
    let oracle = oracle_for(&scenario, "sweep")?;
    let problem = scenario.controlled_problem();
    write_oracle_file(&dir.join("oracle.csv"), &oracle, &problem)?;
    let entries = sweep(&scenario, grid, jobs, TAIL_FRACTION);

    let mut table = create(&dir.join("sweep.csv"))?;
    let table_path = dir.join("sweep.csv");
    writeln!(
        table,
        "k,verdict,settling_time,max_tail_omega,peak_omega,primal_distance,chp_violation,lyapunov_descent_fraction,error"
    )
    .map_err(io_err(&table_path))?;
    let mut outcomes = Vec::new();
    for e in &entries {
        let sub = dir.join(k_dir(e.k));
        make_dir(&sub)?;
        let mut file = base.clone();
        file.controller.damping = DampingEntry::Multiplier { k: e.k };
        write_resolved(&sub, &file)?;
        let mut run_scenario = scenario.clone();
        run_scenario.damping = olfc_core::DampingModel::Multiplier(e.k);
        match (&e.trajectory, &e.report) {
            (Some(traj), Some(report)) => {
                write_trajectory_files(&sub, traj, &run_scenario)?;
                write_report(&sub, &report_values(&run_scenario, report, "../oracle.csv", &oracle, traj))?;
            }
            _ => write_report(
                &sub,
                &error_report(&run_scenario, "../oracle.csv", e.error.as_deref().unwrap_or("no report")),
            )?,
        }
        writeln!(table, "{}", sweep_row(e)).map_err(io_err(&table_path))?;
        outcomes.push(RunOutcome {
            name: k_dir(e.k),
            verdict: e.verdict,
            report: e.report.clone(),
            error: e.error.clone(),
        });
    }
    table.flush().map_err(io_err(&table_path))?;

    let mut kv = KeyValues::default();
    kv.push("experiment", Experiment::DampingSweep.name());
    kv.push("scenario", &base.name);
    kv.push("oracle_file", "oracle.csv");
    kv.push("table", "sweep.csv");
    for e in &entries {
        kv.push(format!("verdict.k={}", e.k), e.verdict);
    }
    write_report(dir, &kv)?;

    let (lo, hi) = ROBUST_K_RANGE;
    if let Some(bad) = entries
        .iter()
        .find(|e| e.verdict == Verdict::Unstable && (lo..=hi).contains(&e.k))
    {
        return Err(CliError::UnstableSweep {
            k: bad.k,
            reason: bad.error.clone().unwrap_or_default(),
        });
    }
    Ok(outcomes)
}

fn sweep_row(e: &SweepEntry<f64>) -> String {
    let r = e.report.as_ref();
    let opt = |f: &dyn Fn(&SteadyStateReport<f64>) -> Option<f64>| r.and_then(f).map(fmt).unwrap_or_default();
    [
        fmt(e.k),
        e.verdict.to_string(),
        opt(&|r| r.settling_time),
        opt(&|r| Some(r.max_tail_omega)),
        opt(&|r| Some(r.peak_omega)),
        opt(&|r| Some(r.primal_distance)),
        opt(&|r| Some(r.violations.chp)),
        opt(&|r| r.lyapunov.as_ref().map(|l| l.descent_fraction())),
        e.error.clone().unwrap_or_default().replace(',', ";"),
    ]
    .join(",")
}

/// Runs the configured experiment. Artifacts are written even when a run
/// fails; the error then carries the exit code.
pub fn run_experiment(config: &RunConfig) -> Result<RunSummary, CliError> {
    let (name, file) = resolve(config)?;
    // Validate before touching the output directory.
    file.build::<f64>()?;
    let dir = config.out.join(&name).join(label(config));
    make_dir(&dir)?;
    write_resolved(&dir, &file)?;
    let runs = match config.experiment {
        Experiment::Custom => vec![single_run(&dir, &name, &file)?.0],
        Experiment::CouplingComparison => coupling_comparison(&dir, &file)?,
        Experiment::DampingSweep => {
            let grid = config.k_grid.as_deref().unwrap_or(&DEFAULT_K_GRID);
            damping_sweep(&dir, &file, grid, config.jobs)?
        }
    };
    Ok(RunSummary { dir, runs })
}
