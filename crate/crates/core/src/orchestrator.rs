//! Recovery pipeline: solve the field, plan every healthy vehicle's path,
//! fly each one closed loop, and search for the fastest common speed that
//! keeps every rotor under its limit.

use crate::fdm::{FieldError, GridSpec, ObstacleStreamValue, StreamFieldGrid};
use crate::flc::{control_step, ControlError, OuterGains};
use crate::flowfield::{validate_obstacles, ObstacleSpec, PlanarPoint};
use crate::quadrotor::{step_rk4, ExtendedState, QuadParams, RotorSpeeds, Wrench};
use crate::streamline::{
    fit::fit_reference_with, reference_drift_rate, step_drift_budget, trace, FitConfig, PlanarPath, ReferenceSample, ReferenceTrajectory, StreamlineError,
    TraceConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tracking errors are judged after this initial transient.
pub const TRACKING_TRANSIENT: f64 = 3.0;
/// Fewest path samples a fit segment may span when segments are halved.
const MIN_SAMPLES_PER_SEGMENT: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("quad {id}: {source}")]
    Planning { id: u32, source: StreamlineError },
    #[error("quad {id} at t = {time} s: {source}")]
    Control { id: u32, time: f64, source: ControlError },
    #[error("lower speed bound {v_lo} m/s is already unsafe (max rotor speed {max_rotor_speed} rad/s)")]
    LowerBoundUnsafe { v_lo: f64, max_rotor_speed: f64 },
    #[error("speed search did not converge in {iterations} simulations (bracket [{low}, {high}])")]
    BisectionBudgetExceeded { iterations: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthyQuad {
    pub id: u32,
    pub initial: ExtendedState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    #[default]
    Bisect,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScenario {
    pub grid: GridSpec,
    pub boundary_gain: f64,
    pub obstacles: Vec<ObstacleSpec>,
    pub obstacle_values: ObstacleStreamValue,
    pub healthy: Vec<HealthyQuad>,
    pub params: QuadParams,
    pub gains: OuterGains,
    pub sim_dt: f64,
    pub horizon: f64,
    pub v_bounds: (f64, f64),
    pub v_tolerance: f64,
    pub max_iterations: usize,
    pub fit: FitConfig,
    /// Feed the reference snap forward in the position law.
    pub snap_feedforward: bool,
}

impl RecoveryScenario {
    pub fn validate(&self) -> Result<(), RecoveryError> {
        let bad = |m: String| Err(RecoveryError::InvalidScenario(m));
        self.grid.validate()?;
        validate_obstacles(&self.obstacles).map_err(RecoveryError::InvalidScenario)?;
        self.params.validate().map_err(|e| RecoveryError::InvalidScenario(e.to_string()))?;
        self.gains.validate().map_err(|e| RecoveryError::InvalidScenario(e.to_string()))?;
        if !(self.boundary_gain > 0.0 && self.boundary_gain.is_finite()) {
            return bad("boundary gain must be positive".into());
        }
        if !(self.sim_dt > 0.0 && self.horizon > self.sim_dt) {
            return bad("need 0 < sim_dt < horizon".into());
        }
        let (lo, hi) = self.v_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("speed bounds ({lo}, {hi}) must satisfy 0 < v_lo < v_hi"));
        }
        if !(self.v_tolerance > 0.0) || self.max_iterations == 0 {
            return bad("speed tolerance and iteration budget must be positive".into());
        }
        let mut ids: Vec<u32> = self.healthy.iter().map(|q| q.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate quad id".into());
        }
        for q in &self.healthy {
            let p = PlanarPoint::new(q.initial.position.x, q.initial.position.y);
            if !self.grid.contains(&p) {
                return bad(format!("quad {} starts outside the domain", q.id));
            }
            if let Some((h, o)) = self.obstacles.iter().enumerate().find(|(_, o)| o.contains(&p)) {
                return bad(format!(
                    "quad {} starts inside unsafe zone {h}: clearance {} m is below the radius {} m",
                    q.id,
                    p.distance_to(&o.center),
                    o.radius
                ));
            }
        }
        Ok(())
    }

    pub fn solve_field(&self) -> Result<StreamFieldGrid, RecoveryError> {
        Ok(StreamFieldGrid::solve(
            &self.grid,
            &self.obstacles,
            self.boundary_gain,
            &self.obstacle_values,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedQuad {
    pub id: u32,
    pub path: PlanarPath,
    pub reference: ReferenceTrajectory,
}

/// Fits with the configured segment length, halving it while the fit misses
/// its deviation limit or drifts off the path's stream value faster than the
/// per-step budget.
fn fit_adaptive(
    field: &StreamFieldGrid,
    path: &PlanarPath,
    z0: f64,
    cfg: &FitConfig,
) -> Result<ReferenceTrajectory, StreamlineError> {
    let budget = step_drift_budget(field);
    let spacing = path.duration() / (path.len().max(2) - 1) as f64;
    let mut cfg = *cfg;
    loop {
        let can_halve = cfg.segment_duration / 2.0 >= MIN_SAMPLES_PER_SEGMENT * spacing;
        match fit_reference_with(path, z0, &cfg) {
            Ok(reference) => {
                let rate = reference_drift_rate(field, path, &reference)?;
                if rate <= budget {
                    return Ok(reference);
                }
                if !can_halve {
                    return Err(StreamlineError::DriftExceeded {
                        time: path.duration(),
                        drift: rate,
                        tolerance: budget,
                    });
                }
            }
            Err(StreamlineError::FitToleranceExceeded { .. }) if can_halve => {}
            Err(e) => return Err(e),
        }
        cfg.segment_duration /= 2.0;
    }
}

/// Traces and fits one reference per healthy vehicle at speed `v`.
pub fn plan_references(
    scenario: &RecoveryScenario,
    field: &StreamFieldGrid,
    v: f64,
) -> Result<Vec<PlannedQuad>, RecoveryError> {
    let cfg = TraceConfig::for_field(field, v, scenario.horizon);
    scenario
        .healthy
        .par_iter()
        .map(|q| {
            let planning = |source| RecoveryError::Planning { id: q.id, source };
            let start = PlanarPoint::new(q.initial.position.x, q.initial.position.y);
            let path = trace(field, &start, v, &cfg).map_err(planning)?;
            let reference = fit_adaptive(field, &path, q.initial.position.z, &scenario.fit).map_err(planning)?;
            Ok(PlannedQuad {
                id: q.id,
                path,
                reference,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSample {
    pub t: f64,
    pub state: ExtendedState,
    pub reference: ReferenceSample,
    pub wrench: Wrench,
    pub rotors: RotorSpeeds,
}

impl LogSample {
    pub fn tracking_error(&self) -> f64 {
        (self.state.position - self.reference.position).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadLog {
    pub id: u32,
    pub path: PlanarPath,
    pub reference: ReferenceTrajectory,
    pub samples: Vec<LogSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub max_rotor_speed: f64,
    pub min_rotor_speed: f64,
    /// Smallest center distance of any actual position to any obstacle.
    pub min_clearance: f64,
    /// Largest position error after the initial transient.
    pub max_tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub speed: f64,
    pub quads: Vec<QuadLog>,
    pub summary: LogSummary,
}

/// Flies one vehicle closed loop along its reference until the reference
/// ends or the horizon is reached.
pub fn simulate_quad(
    scenario: &RecoveryScenario,
    initial: &ExtendedState,
    reference: &ReferenceTrajectory,
) -> Result<Vec<LogSample>, (f64, ControlError)> {
    let dt = scenario.sim_dt;
    let end = reference.end_time().min(scenario.horizon);
    let steps = ((end - reference.start_time()) / dt).floor() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut state = *initial;
    for k in 0..=steps {
        let t = reference.start_time() + k as f64 * dt;
        let mut r = reference.sample(t);
        if !scenario.snap_feedforward {
            r.snap = nalgebra::Vector3::zeros();
        }
        let out = control_step(&state, &r, &scenario.gains, &scenario.params).map_err(|e| (t, e))?;
        samples.push(LogSample {
            t,
            state,
            reference: r,
            wrench: out.wrench,
            rotors: out.rotors,
        });
        if k < steps {
            state = step_rk4(&state, &out.input, dt, &scenario.params).map_err(|e| (t, e.into()))?;
        }
    }
    Ok(samples)
}

fn summarize(quads: &[QuadLog], obstacles: &[ObstacleSpec]) -> LogSummary {
    let mut summary = LogSummary {
        max_rotor_speed: 0.0,
        min_rotor_speed: f64::INFINITY,
        min_clearance: check_clearance(quads, obstacles).min_distance,
        max_tracking_error: 0.0,
    };
    for s in quads.iter().flat_map(|q| &q.samples) {
        summary.max_rotor_speed = summary.max_rotor_speed.max(s.rotors.max());
        summary.min_rotor_speed = summary.min_rotor_speed.min(s.rotors.min());
        if s.t >= TRACKING_TRANSIENT {
            summary.max_tracking_error = summary.max_tracking_error.max(s.tracking_error());
        }
    }
    summary
}

pub fn simulate_recovery(scenario: &RecoveryScenario, v: f64) -> Result<SimulationLog, RecoveryError> {
    scenario.validate()?;
    let field = scenario.solve_field()?;
    simulate_with_field(scenario, &field, v)
}

/// Same as [`simulate_recovery`] over an already solved field.
pub fn simulate_with_field(
    scenario: &RecoveryScenario,
    field: &StreamFieldGrid,
    v: f64,
) -> Result<SimulationLog, RecoveryError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(RecoveryError::InvalidScenario(format!("speed {v} must be positive")));
    }
    let plans = plan_references(scenario, field, v)?;
    let quads: Vec<QuadLog> = scenario
        .healthy
        .par_iter()
        .zip(plans.into_par_iter())
        .map(|(q, plan)| {
            let samples = simulate_quad(scenario, &q.initial, &plan.reference).map_err(|(time, source)| {
                RecoveryError::Control {
                    id: q.id,
                    time,
                    source,
                }
            })?;
            Ok(QuadLog {
                id: q.id,
                path: plan.path,
                reference: plan.reference,
                samples,
            })
        })
        .collect::<Result<_, RecoveryError>>()?;
    let summary = summarize(&quads, &scenario.obstacles);
    Ok(SimulationLog {
        speed: v,
        quads,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub quad: u32,
    pub rotor: usize,
    pub time: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub safe: bool,
    pub max_rotor_speed: f64,
    pub first_violation: Option<Violation>,
}

/// Every rotor speed must lie in `(0, omega_max]`; the earliest offending
/// sample is reported.
pub fn check_safety(quads: &[QuadLog], omega_max: f64) -> SafetyVerdict {
    let mut max_rotor_speed: f64 = 0.0;
    let mut first: Option<Violation> = None;
    for q in quads {
        for s in &q.samples {
            max_rotor_speed = max_rotor_speed.max(s.rotors.max());
            if first.is_some_and(|f| f.time <= s.t) {
                continue;
            }
            if let Some((rotor, &speed)) = s
                .rotors
                .0
                .iter()
                .enumerate()
                .find(|(_, &w)| !(w > 0.0 && w <= omega_max))
            {
                first = Some(Violation {
                    quad: q.id,
                    rotor,
                    time: s.t,
                    speed,
                });
            }
        }
    }
    SafetyVerdict {
        safe: first.is_none(),
        max_rotor_speed,
        first_violation: first,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleClearance {
    pub radius: f64,
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearanceReport {
    /// Raw center distance, `+∞` without obstacles or samples.
    pub min_distance: f64,
    pub per_obstacle: Vec<ObstacleClearance>,
}

impl ClearanceReport {
    /// True when every obstacle keeps at least `fraction·radius`.
    pub fn respects(&self, fraction: f64) -> bool {
        self.per_obstacle.iter().all(|o| o.min_distance >= fraction * o.radius)
    }
}

/// Planar distance of the actual positions to each obstacle center.
pub fn check_clearance(quads: &[QuadLog], obstacles: &[ObstacleSpec]) -> ClearanceReport {
    let per_obstacle: Vec<ObstacleClearance> = obstacles
        .iter()
        .map(|o| ObstacleClearance {
            radius: o.radius,
            min_distance: quads
                .iter()
                .flat_map(|q| &q.samples)
                .map(|s| PlanarPoint::new(s.state.position.x, s.state.position.y).distance_to(&o.center))
                .fold(f64::INFINITY, f64::min),
        })
        .collect();
    let min_distance = per_obstacle.iter().map(|o| o.min_distance).fold(f64::INFINITY, f64::min);
    ClearanceReport {
        min_distance,
        per_obstacle,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEvaluation {
    pub speed: f64,
    pub safe: bool,
    pub max_rotor_speed: f64,
}

#[derive(Debug, Clone)]
pub struct SpeedSearch {
    pub v_star: f64,
    pub log: SimulationLog,
    /// Every closed-loop evaluation in order, including the final
    /// monotonicity re-check when it was run.
    pub evaluations: Vec<SpeedEvaluation>,
    /// Whether `v_star + v_tolerance` was confirmed unsafe; `None` when the
    /// upper bound itself was safe.
    pub next_step_unsafe: Option<bool>,
}

impl SpeedSearch {
    pub fn simulations(&self) -> usize {
        self.evaluations.len()
    }
}

struct Evaluator<'a> {
    scenario: &'a RecoveryScenario,
    field: StreamFieldGrid,
    evaluations: Vec<SpeedEvaluation>,
}

impl Evaluator<'_> {
    /// Closed-loop feasibility at `v`. Controller and model failures mean the
    /// vehicle cannot fly the maneuver, so they count as unsafe.
    fn evaluate(&mut self, v: f64) -> Result<(bool, Option<SimulationLog>), RecoveryError> {
        let (safe, max_rotor_speed, log) = match simulate_with_field(self.scenario, &self.field, v) {
            Ok(log) => {
                let verdict = check_safety(&log.quads, self.scenario.params.omega_max);
                (verdict.safe, verdict.max_rotor_speed, Some(log))
            }
            Err(RecoveryError::Control { .. }) => (false, f64::INFINITY, None),
            Err(e) => return Err(e),
        };
        self.evaluations.push(SpeedEvaluation {
            speed: v,
            safe,
            max_rotor_speed,
        });
        Ok((safe, log.filter(|_| safe)))
    }

    fn budget_check(&self, low: f64, high: f64) -> Result<(), RecoveryError> {
        if self.evaluations.len() >= self.scenario.max_iterations {
            return Err(RecoveryError::BisectionBudgetExceeded {
                iterations: self.evaluations.len(),
                low,
                high,
            });
        }
        Ok(())
    }
}

/// Largest common speed in `v_bounds` for which every rotor stays within
/// `(0, ω_max]`, up to `v_tolerance`.
pub fn max_safe_speed(scenario: &RecoveryScenario, strategy: SearchStrategy) -> Result<SpeedSearch, RecoveryError> {
    scenario.validate()?;
    let mut ev = Evaluator {
        scenario,
        field: scenario.solve_field()?,
        evaluations: Vec::new(),
    };
    let (v_lo, v_hi) = scenario.v_bounds;
    let tol = scenario.v_tolerance;

    let (safe, log) = ev.evaluate(v_lo)?;
    let Some(mut best_log) = log.filter(|_| safe) else {
        return Err(RecoveryError::LowerBoundUnsafe {
            v_lo,
            max_rotor_speed: ev.evaluations[0].max_rotor_speed,
        });
    };
    let mut low = v_lo;

    match strategy {
        SearchStrategy::Bisect => {
            ev.budget_check(low, v_hi)?;
            if let (true, Some(log)) = ev.evaluate(v_hi)? {
                return Ok(SpeedSearch {
                    v_star: v_hi,
                    log,
                    evaluations: ev.evaluations,
                    next_step_unsafe: None,
                });
            }
            let mut high = v_hi;
            while high - low > tol {
                ev.budget_check(low, high)?;
                let mid = 0.5 * (low + high);
                match ev.evaluate(mid)? {
                    (true, Some(log)) => {
                        low = mid;
                        best_log = log;
                    }
                    _ => high = mid,
                }
            }
        }
        SearchStrategy::Incremental => {
            let mut step = (v_hi - v_lo) / 16.0;
            while step > tol / 2.0 {
                let next = (low + step).min(v_hi);
                if next <= low {
                    break;
                }
                ev.budget_check(low, next)?;
                match ev.evaluate(next)? {
                    (true, Some(log)) => {
                        low = next;
                        best_log = log;
                        if low >= v_hi {
                            return Ok(SpeedSearch {
                                v_star: low,
                                log: best_log,
                                evaluations: ev.evaluations,
                                next_step_unsafe: None,
                            });
                        }
                    }
                    _ => step /= 2.0,
                }
            }
        }
    }

    let probe = low + tol;
    let next_step_unsafe = if probe > v_hi {
        None
    } else {
        Some(!ev.evaluate(probe)?.0)
    };
    Ok(SpeedSearch {
        v_star: low,
        log: best_log,
        evaluations: ev.evaluations,
        next_step_unsafe,
    })
}
