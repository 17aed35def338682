//! Command implementations behind the `formation-sim` binary.
//!
//! Each command writes its report to the given writer and returns the
//! process exit code: 0 on success, 1 when the scenario ran but failed
//! (infeasible start, collision, timeout, failed certificate), 2 for usage
//! and parse errors.

pub mod output;
pub mod scenario;

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{certify, lyapunov};
use crate::formation::{angle_sum, errors, validate_feasibility, FormationState, TargetSpec};
use crate::simulator::{run, Sample, Termination, TrajectoryRecord};

use output::{
    read_trajectory_csv, write_plot_data, write_trajectory_csv, CollisionEvent, RunStatus,
    RunSummary,
};
pub use scenario::{InitialCondition, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Tolerance when checking a trajectory's error columns against its
/// positions.
const CSV_ERROR_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {message}")]
    Trajectory { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_FAILURE,
            _ => EXIT_USAGE,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn report_io(e: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<output>"),
        source: e,
    }
}

/// `validate <file>`: prints the feasibility checks; exit 0 iff all pass.
pub fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let scenario = Scenario::load(path)?;
    let (spec, state0) = match build(&scenario) {
        Ok(pair) => pair,
        Err(e) => {
            writeln!(out, "{}: cannot build initial state: {e}", scenario.name)
                .map_err(report_io)?;
            return Ok(EXIT_FAILURE);
        }
    };
    let report = validate_feasibility(&state0, &spec);
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    let mut text = format!("scenario {} (n = {})\n", scenario.name, scenario.n);
    text += &format!(
        "  non-collinear targets: {}{}\n",
        verdict(report.assumption_ok),
        if report.collinear_targets.is_empty() {
            String::new()
        } else {
            let v: Vec<String> = report
                .collinear_targets
                .iter()
                .map(|i| (i + 1).to_string())
                .collect();
            format!(" (vehicles {})", v.join(", "))
        }
    );
    text += &format!(
        "  angle sum: {} (initial {:.9} deg, target {:.9} deg)\n",
        verdict(report.sum_ok),
        report.initial_angle_sum.to_degrees(),
        report.target_angle_sum.to_degrees()
    );
    text += &format!("  side flags: {}", verdict(report.sides_ok()));
    let bad: Vec<String> = report
        .side_ok
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    if !bad.is_empty() {
        text += &format!(" (vehicles {})", bad.join(", "));
    }
    text += "\n";
    for w in &report.warnings {
        text += &format!("  warning: {w}\n");
    }
    text += &format!("  result: {}\n", verdict(report.passes()));
    out.write_all(text.as_bytes()).map_err(report_io)?;
    Ok(if report.passes() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn build(scenario: &Scenario) -> crate::Result<(TargetSpec, FormationState)> {
    Ok((scenario.target_spec()?, scenario.initial_state()?))
}

/// Result of executing one scenario in memory.
pub struct Execution {
    pub summary: RunSummary,
    pub record: Option<TrajectoryRecord>,
}

impl Execution {
    pub fn exit_code(&self) -> i32 {
        if self.summary.status == RunStatus::Converged {
            EXIT_OK
        } else {
            EXIT_FAILURE
        }
    }
}

fn empty_summary(scenario: &Scenario, status: RunStatus, message: String) -> RunSummary {
    RunSummary {
        scenario: scenario.name.clone(),
        n: scenario.n,
        status,
        message: Some(message),
        converged: false,
        settled: false,
        t_f: None,
        t_star: None,
        v0: None,
        v_final: None,
        t_end: None,
        dt: scenario.sim.dt,
        stepper: scenario.sim.stepper.clone(),
        samples: 0,
        min_distance: None,
        angle_sum_drift: None,
        collision: None,
        feasibility: None,
        certificate: None,
        certificate_error: None,
    }
}

/// Runs a parsed scenario and certifies the result. Never fails: every
/// problem ends up in the summary.
pub fn execute(scenario: &Scenario, force: bool) -> Execution {
    let (spec, state0) = match build(scenario) {
        Ok(pair) => pair,
        Err(e) => {
            return Execution {
                summary: empty_summary(scenario, RunStatus::Error, e.to_string()),
                record: None,
            }
        }
    };
    let feasibility = validate_feasibility(&state0, &spec);
    if !feasibility.passes() && !force {
        let mut summary = empty_summary(
            scenario,
            RunStatus::Infeasible,
            feasibility.warnings.join("; "),
        );
        summary.v0 = errors(&state0, &spec).ok().map(|e| lyapunov(&e));
        summary.feasibility = Some(feasibility);
        return Execution {
            summary,
            record: None,
        };
    }

    let cfg = crate::simulator::SimConfig {
        force,
        ..scenario.sim.clone()
    };
    let record = match run(&state0, &spec, &cfg) {
        Ok(r) => r,
        Err(e) => {
            let mut summary = empty_summary(scenario, RunStatus::Error, e.to_string());
            summary.feasibility = Some(feasibility);
            return Execution {
                summary,
                record: None,
            };
        }
    };

    let status = match record.termination {
        Termination::Collision { .. } => RunStatus::Collision,
        _ if record.converged => RunStatus::Converged,
        _ => RunStatus::Timeout,
    };
    let (certificate, certificate_error) = if record.converged {
        match certify(&record, &state0, &spec) {
            Ok(c) => {
                if !c.all_pass() {
                    warn!("{}: certificate checks failed", scenario.name);
                }
                (Some(c), None)
            }
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let sum0 = angle_sum(&state0);
    let drift = record
        .samples
        .iter()
        .filter_map(|s| s.state().ok())
        .map(|s| (angle_sum(&s) - sum0).abs())
        .fold(0.0, f64::max);
    let message = match status {
        RunStatus::Timeout => Some(format!("no convergence within t_max = {}", cfg.t_max)),
        RunStatus::Collision => record.ensure_collision_free().err().map(|e| e.to_string()),
        _ => None,
    };

    let summary = RunSummary {
        scenario: scenario.name.clone(),
        n: scenario.n,
        status,
        message,
        converged: record.converged,
        settled: record.settled,
        t_f: record.t_f,
        t_star: Some(record.t_star),
        v0: Some(record.initial().lyapunov),
        v_final: Some(record.last().lyapunov),
        t_end: Some(record.last().t),
        dt: record.dt,
        stepper: record.stepper.clone(),
        samples: record.samples.len(),
        min_distance: Some(
            record
                .samples
                .iter()
                .map(|s| s.min_distance)
                .fold(f64::INFINITY, f64::min),
        ),
        angle_sum_drift: Some(drift),
        collision: CollisionEvent::from_termination(&record.termination),
        feasibility: Some(feasibility),
        certificate,
        certificate_error,
    };
    Execution {
        summary,
        record: Some(record),
    }
}

/// Writes `trajectory.csv`, `plot/*` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, exec: &Execution) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    if let Some(record) = &exec.record {
        let path = dir.join("trajectory.csv");
        let file = File::create(&path).map_err(CliError::io(&path))?;
        write_trajectory_csv(file, record.n, &record.samples).map_err(CliError::io(&path))?;
        write_plot_data(dir, record.n, &record.samples).map_err(CliError::io(dir))?;
    }
    exec.summary.write(dir).map_err(CliError::io(dir))
}

fn one_line(s: &RunSummary) -> String {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
    format!(
        "{}: {} (n = {}, V0 = {}, t_f = {}, T* = {})",
        s.scenario,
        s.status.as_str(),
        s.n,
        opt(s.v0),
        opt(s.t_f),
        opt(s.t_star)
    )
}

/// `run <file> --out <dir> [--force]`.
pub fn cmd_run(
    path: &Path,
    out_dir: &Path,
    force: bool,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let scenario = Scenario::load(path)?;
    info!("running {} from {}", scenario.name, path.display());
    let exec = execute(&scenario, force);
    write_outputs(out_dir, &exec)?;
    writeln!(out, "{}", one_line(&exec.summary)).map_err(report_io)?;
    if let Some(c) = &exec.summary.certificate {
        writeln!(
            out,
            "  kappa = {:.6e}, V0/kappa = {:.6}, time {}, displacement {}, horizon {}",
            c.kappa,
            c.time_bound,
            pass(c.time_ok),
            pass(c.displacement_ok),
            pass(c.horizon_ok)
        )
        .map_err(report_io)?;
    }
    if let Some(m) = &exec.summary.message {
        writeln!(out, "  {m}").map_err(report_io)?;
    }
    Ok(exec.exit_code())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// One row of the batch table.
#[derive(Debug, Clone)]
pub struct BatchRow {
    pub scenario: String,
    pub path: PathBuf,
    pub n: Option<usize>,
    pub v0: Option<f64>,
    pub t_f: Option<f64>,
    pub time_bound: Option<f64>,
    pub t_star: Option<f64>,
    pub converged: bool,
    pub status: String,
}

pub const BATCH_HEADER: &str = "scenario,n,V0,t_f,V0_over_kappa,T_star,converged,status";

impl BatchRow {
    pub fn csv(&self) -> String {
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.16e}"));
        format!(
            "{},{},{},{},{},{},{},{}",
            self.scenario,
            self.n.map_or(String::new(), |n| n.to_string()),
            f(self.v0),
            f(self.t_f),
            f(self.time_bound),
            f(self.t_star),
            self.converged,
            self.status
        )
    }
}

fn batch_one(path: &Path, out_dir: &Path) -> BatchRow {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario")
        .to_string();
    let failed = |status: String| BatchRow {
        scenario: stem.clone(),
        path: path.to_path_buf(),
        n: None,
        v0: None,
        t_f: None,
        time_bound: None,
        t_star: None,
        converged: false,
        status,
    };
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            warn!("{e}");
            return failed("parse_error".into());
        }
    };
    let exec = execute(&scenario, false);
    if let Err(e) = write_outputs(&out_dir.join(&stem), &exec) {
        warn!("{e}");
        return failed("io_error".into());
    }
    let s = &exec.summary;
    info!("{}", one_line(s));
    BatchRow {
        scenario: stem,
        path: path.to_path_buf(),
        n: Some(s.n),
        v0: s.v0,
        t_f: s.t_f,
        time_bound: s.certificate.as_ref().map(|c| c.time_bound),
        t_star: s.t_star,
        converged: s.converged,
        status: s.status.as_str().into(),
    }
}

/// `batch <glob> --out <dir> --jobs <k>`: runs every matching scenario into
/// `<dir>/<file stem>/` and writes `<dir>/batch_summary.csv`.
pub fn cmd_batch(
    pattern: &str,
    out_dir: &Path,
    jobs: usize,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let paths = glob::glob(pattern)
        .map_err(|e| CliError::Usage(format!("invalid pattern `{pattern}`: {e}")))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut paths: Vec<PathBuf> = paths.into_iter().filter(|p| p.is_file()).collect();
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no scenario files match `{pattern}`"
        )));
    }
    paths.sort();
    let mut stems: Vec<_> = paths
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_owned()))
        .collect();
    stems.sort();
    if stems.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Usage(
            "matched scenario files must have distinct file names".into(),
        ));
    }

    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let rows: Vec<BatchRow> =
        pool.install(|| paths.par_iter().map(|p| batch_one(p, out_dir)).collect());

    let mut table = String::from(BATCH_HEADER);
    table.push('\n');
    for row in &rows {
        table += &row.csv();
        table.push('\n');
    }
    let summary_path = out_dir.join("batch_summary.csv");
    fs::write(&summary_path, &table).map_err(CliError::io(&summary_path))?;
    out.write_all(table.as_bytes()).map_err(report_io)?;

    let all_ok = rows.iter().all(|r| r.converged && r.status == "converged");
    Ok(if all_ok { EXIT_OK } else { EXIT_FAILURE })
}

/// `certify <trajectory.csv> <file>`: recomputes the certificate of a saved
/// run against its scenario and prints it as JSON; exit 0 iff every check
/// passes.
pub fn cmd_certify(
    csv_path: &Path,
    scenario_path: &Path,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let scenario = Scenario::load(scenario_path)?;
    let bad_csv = |message: String| CliError::Trajectory {
        path: csv_path.to_path_buf(),
        message,
    };
    let file = File::open(csv_path).map_err(CliError::io(csv_path))?;
    let table = read_trajectory_csv(BufReader::new(file)).map_err(bad_csv)?;
    if table.n != scenario.n {
        return Err(bad_csv(format!(
            "trajectory has {} vehicles, scenario has {}",
            table.n, scenario.n
        )));
    }
    let spec = scenario
        .target_spec()
        .map_err(|e| CliError::Usage(format!("{}: {e}", scenario_path.display())))?;
    let policy = scenario.sim.policy();

    let mut samples = Vec::with_capacity(table.rows.len());
    for (k, row) in table.rows.iter().enumerate() {
        let s = Sample::capture(row.t, row.positions.clone(), &spec, &policy, 0)
            .map_err(|e| bad_csv(format!("row {}: {e}", k + 1)))?;
        let mismatch = s
            .errors
            .iter()
            .zip(&row.errors)
            .any(|(a, b)| (a - b).abs() > CSV_ERROR_TOL);
        if mismatch {
            return Err(bad_csv(format!(
                "row {}: error columns do not match the scenario's target angles",
                k + 1
            )));
        }
        samples.push(s);
    }
    let state0 = samples[0]
        .state()
        .map_err(|e| bad_csv(format!("row 1: {e}")))?;
    let record = rebuild_record(samples, &scenario, &state0);
    match certify(&record, &state0, &spec) {
        Ok(c) => {
            let text = serde_json::to_string_pretty(&c).expect("certificate serializes");
            writeln!(out, "{text}").map_err(report_io)?;
            Ok(if c.all_pass() { EXIT_OK } else { EXIT_FAILURE })
        }
        Err(e) => {
            writeln!(out, "{e}").map_err(report_io)?;
            Ok(EXIT_FAILURE)
        }
    }
}

fn rebuild_record(
    samples: Vec<Sample>,
    scenario: &Scenario,
    state0: &FormationState,
) -> TrajectoryRecord {
    let tol = scenario.sim.convergence_tol;
    let t_f = samples.iter().find(|s| s.lyapunov <= tol).map(|s| s.t);
    let settled = t_f.is_some_and(|tf| {
        samples
            .iter()
            .filter(|s| s.t > tf)
            .all(|s| s.max_speed() == 0.0)
    });
    TrajectoryRecord {
        n: scenario.n,
        dt: scenario.sim.dt,
        stepper: scenario.sim.stepper.clone(),
        converged: t_f.is_some(),
        t_f,
        t_star: crate::simulator::collision_horizon(state0),
        collision_floor: scenario.sim.collision_floor_for(state0),
        termination: if t_f.is_some() {
            Termination::Converged
        } else {
            Termination::Timeout
        },
        settled,
        samples,
    }
}
