//! Command-line front end: scenario loading, pipeline runs and artifact
//! files.

pub mod scenario;

use crate::fdm::contour::contour_polylines;
use crate::fdm::field_file::write_field_file;
use crate::fdm::FieldError;
use crate::orchestrator::{
    check_clearance, max_safe_speed, plan_references, QuadLog, RecoveryError, RecoveryScenario, SearchStrategy,
    SpeedSearch,
};
use crate::streamline::{write_path_csv, ReferenceTrajectory, StreamlineError};
use scenario::ScenarioFile;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Number of evenly spaced stream levels written to the contour file.
pub const CONTOUR_LEVELS: usize = 40;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Infeasible(_) => 4,
        }
    }
}

fn field_error(e: FieldError) -> CliError {
    match e {
        FieldError::SolverDiverged { .. } | FieldError::StagnationPoint { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Input(e.to_string()),
    }
}

impl From<RecoveryError> for CliError {
    fn from(e: RecoveryError) -> Self {
        let message = e.to_string();
        match e {
            RecoveryError::InvalidScenario(_) => CliError::Input(message),
            RecoveryError::Field(f) => field_error(f),
            RecoveryError::Planning {
                source: StreamlineError::StagnationStart { .. },
                ..
            } => CliError::Input(message),
            RecoveryError::LowerBoundUnsafe { .. } => CliError::Infeasible(message),
            RecoveryError::Planning { .. }
            | RecoveryError::Control { .. }
            | RecoveryError::BisectionBudgetExceeded { .. } => CliError::Numerical(message),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<(ScenarioFile, RecoveryScenario), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let file = ScenarioFile::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let scenario = file
        .to_scenario()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((file, scenario))
}

/// Output directory from the flag or, failing that, the scenario file.
pub fn output_dir(flag: Option<&Path>, file: &ScenarioFile) -> Result<PathBuf, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| file.output_dir.clone())
        .ok_or_else(|| CliError::Input("no output directory: pass --out or set output_dir".into()))
}

/// Files are rendered in memory first so that a failure leaves nothing
/// half-written.
fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<(), CliError> {
    for (path, _) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
    }
    for (path, bytes) in files {
        fs::write(path, bytes).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

/// Evenly spaced interior levels of `K·y` across the domain.
pub fn contour_levels(scenario: &RecoveryScenario) -> Vec<f64> {
    let g = &scenario.grid;
    let k = scenario.boundary_gain;
    let n = CONTOUR_LEVELS;
    (1..=n)
        .map(|i| k * (g.y_min + g.height() * i as f64 / (n + 1) as f64))
        .collect()
}

/// `level,x,y` rows; consecutive polylines are separated by `level,NaN,NaN`.
pub fn contour_csv(lines: &[crate::fdm::contour::ContourLine]) -> String {
    let mut out = String::from("level,x,y\n");
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            writeln!(out, "{},NaN,NaN", line.level).unwrap();
        }
        for p in &line.points {
            writeln!(out, "{},{},{}", line.level, p.x, p.y).unwrap();
        }
    }
    out
}

pub fn cmd_solve_field(scenario_path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (_, scenario) = load_scenario(scenario_path)?;
    let field = scenario.solve_field()?;
    let mut field_bytes = Vec::new();
    write_field_file(&field, &mut field_bytes).map_err(|e| io_error(out, e))?;
    let lines = contour_polylines(&field, &contour_levels(&scenario));
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "field".into());
    let contours = out.with_file_name(format!("{stem}.contours.csv"));
    let files = vec![(out.to_path_buf(), field_bytes), (contours, contour_csv(&lines).into_bytes())];
    write_all(&files)?;
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Reference columns: position, velocity, acceleration and jerk.
pub fn reference_csv(reference: &ReferenceTrajectory, dt: f64) -> String {
    let mut out = String::from("t,x_d,y_d,z_d,vx_d,vy_d,vz_d,ax_d,ay_d,az_d,jx_d,jy_d,jz_d\n");
    let steps = ((reference.end_time() - reference.start_time()) / dt).floor() as usize;
    for k in 0..=steps {
        let t = reference.start_time() + k as f64 * dt;
        let s = reference.sample(t);
        write!(out, "{t}").unwrap();
        for v in [s.position, s.velocity, s.acceleration, s.jerk] {
            write!(out, ",{},{},{}", v.x, v.y, v.z).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn cmd_plan(scenario_path: &Path, speed: f64, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let (file, scenario) = load_scenario(scenario_path)?;
    let dir = output_dir(out, &file)?;
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(CliError::Input(format!("--speed {speed} must be positive")));
    }
    let field = scenario.solve_field()?;
    let plans = plan_references(&scenario, &field, speed)?;
    let mut files = Vec::new();
    for plan in &plans {
        files.push((
            dir.join(format!("reference_{}.csv", plan.id)),
            reference_csv(&plan.reference, scenario.sim_dt).into_bytes(),
        ));
        let mut path_bytes = Vec::new();
        write_path_csv(&plan.path, &mut path_bytes).map_err(|e| io_error(&dir, e))?;
        files.push((dir.join(format!("path_{}.csv", plan.id)), path_bytes));
    }
    write_all(&files)?;
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Actual and desired position, attitude and rotor speeds per sample.
pub fn trajectory_csv(quad: &QuadLog) -> String {
    let mut out = String::from("t,x,y,z,x_d,y_d,z_d,phi,theta,psi,w1,w2,w3,w4\n");
    for s in &quad.samples {
        let (r, d, e, w) = (s.state.position, s.reference.position, s.state.euler, s.rotors.0);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t, r.x, r.y, r.z, d.x, d.y, d.z, e.x, e.y, e.z, w[0], w[1], w[2], w[3]
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct RecoverySummary {
    pub v_star: f64,
    pub max_rotor_speed: f64,
    /// Center distance; `null` when there are no obstacles.
    pub min_clearance: Option<f64>,
    pub max_tracking_error: f64,
    pub iterations: usize,
}

pub fn summarize_search(search: &SpeedSearch, scenario: &RecoveryScenario) -> RecoverySummary {
    let clearance = check_clearance(&search.log.quads, &scenario.obstacles);
    RecoverySummary {
        v_star: search.v_star,
        max_rotor_speed: search.log.summary.max_rotor_speed,
        min_clearance: Some(clearance.min_distance).filter(|d| d.is_finite()),
        max_tracking_error: search.log.summary.max_tracking_error,
        iterations: search.simulations(),
    }
}

fn search_csv(search: &SpeedSearch) -> String {
    let mut out = String::from("speed,safe,max_rotor_speed\n");
    for e in &search.evaluations {
        writeln!(out, "{},{},{}", e.speed, e.safe, e.max_rotor_speed).unwrap();
    }
    out
}

pub fn cmd_recover(
    scenario_path: &Path,
    out: Option<&Path>,
    strategy: SearchStrategy,
) -> Result<RecoverySummary, CliError> {
    let (file, scenario) = load_scenario(scenario_path)?;
    let dir = output_dir(out, &file)?;
    let search = max_safe_speed(&scenario, strategy)?;
    let summary = summarize_search(&search, &scenario);
    let mut files: Vec<(PathBuf, Vec<u8>)> = search
        .log
        .quads
        .iter()
        .map(|q| (dir.join(format!("traj_{}.csv", q.id)), trajectory_csv(q).into_bytes()))
        .collect();
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Numerical(e.to_string()))?;
    files.push((dir.join("summary.json"), json.into_bytes()));
    files.push((dir.join("search.csv"), search_csv(&search).into_bytes()));
    write_all(&files)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "v* = {} m/s after {} simulations", summary.v_star, summary.iterations);
    Ok(summary)
}
