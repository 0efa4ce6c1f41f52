//! Streamline tracing through a solved stream field and smooth reference
//! fitting.
//!
//! A healthy vehicle keeps the stream value of its start point and slides
//! along that level curve at a fixed speed, so distinct starts give disjoint
//! paths that never enter an unsafe zone.

pub mod fit;

pub use fit::{fit_reference, FitConfig, ReferenceSample, ReferenceTrajectory};

use crate::fdm::{FieldError, StreamFieldGrid};
use crate::flowfield::PlanarPoint;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamlineError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("start ({x}, {y}) lies on the stagnation streamline of obstacle {obstacle}")]
    StagnationStart { x: f64, y: f64, obstacle: usize },
    #[error("stream value drifted by {drift:e} at t = {time} s (tolerance {tolerance:e}); reduce the step")]
    DriftExceeded { time: f64, drift: f64, tolerance: f64 },
    #[error("fitted reference deviates {deviation} m from the path (limit {limit} m)")]
    FitToleranceExceeded { deviation: f64, limit: f64 },
    #[error("path has {0} samples, at least 8 are needed for a fit")]
    TooFewSamples(usize),
    #[error("invalid trace setup: {0}")]
    InvalidConfig(String),
}

impl StreamlineError {
    /// True when the trace ran into vanishing flow.
    pub fn is_stagnation(&self) -> bool {
        matches!(
            self,
            StreamlineError::StagnationStart { .. } | StreamlineError::Field(FieldError::StagnationPoint { .. })
        )
    }
}

/// Relative share of `K·Δy` the stream value may drift per integration step.
pub const DRIFT_BUDGET_PER_STEP: f64 = 1e-3;

/// Drift allowed per integration step, `DRIFT_BUDGET_PER_STEP·K·Δy`. A start
/// whose stream value is this close to an obstacle's is on its stagnation
/// streamline.
pub fn step_drift_budget(field: &StreamFieldGrid) -> f64 {
    DRIFT_BUDGET_PER_STEP * field.boundary_gain() * field.grid().dy()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub step_dt: f64,
    pub horizon: f64,
    /// Largest allowed `|Ψ(r(t)) − Ψ₀|` anywhere on the path.
    pub psi_drift_tolerance: f64,
}

impl TraceConfig {
    /// Sub-cell step `min(Δx, Δy)/(4v)` and a drift tolerance accumulated
    /// from the per-step budget over the whole horizon.
    pub fn for_field(field: &StreamFieldGrid, speed: f64, horizon: f64) -> Self {
        let g = field.grid();
        let step_dt = g.dx().min(g.dy()) / (4.0 * speed);
        let steps = (horizon / step_dt).ceil();
        Self {
            step_dt,
            horizon,
            psi_drift_tolerance: steps * step_drift_budget(field),
        }
    }

    pub fn validate(&self) -> Result<(), StreamlineError> {
        if !(self.step_dt > 0.0 && self.step_dt.is_finite()) {
            return Err(StreamlineError::InvalidConfig("step_dt must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(StreamlineError::InvalidConfig("horizon must be positive".into()));
        }
        if !(self.psi_drift_tolerance > 0.0) {
            return Err(StreamlineError::InvalidConfig(
                "psi_drift_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPath {
    pub times: Vec<f64>,
    pub points: Vec<PlanarPoint>,
    pub psi_0: f64,
}

impl PlanarPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Largest `|Ψ(r) − Ψ₀|` over the samples.
    pub fn max_psi_drift(&self, field: &StreamFieldGrid) -> Result<f64, FieldError> {
        self.points.iter().try_fold(0.0f64, |worst, p| {
            Ok(worst.max((field.sample_psi(p)? - self.psi_0).abs()))
        })
    }

    /// Smallest distance from any sample to `center`.
    pub fn min_distance_to(&self, center: &PlanarPoint) -> f64 {
        self.points
            .iter()
            .map(|p| p.distance_to(center))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Stream value carried by a vehicle starting at `start`.
pub fn assign_stream_value(field: &StreamFieldGrid, start: &PlanarPoint) -> Result<f64, FieldError> {
    field.sample_psi(start)
}

fn velocity(field: &StreamFieldGrid, p: &PlanarPoint, speed: f64) -> Result<Option<(f64, f64)>, FieldError> {
    match field.sample_velocity_direction(p) {
        Ok((ux, uy)) => Ok(Some((speed * ux, speed * uy))),
        Err(FieldError::OutOfDomain { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Integrates `dr/dt = v·û(r)` with classical RK4 from `t = 0` until the
/// horizon or until the path leaves the domain.
pub fn trace(
    field: &StreamFieldGrid,
    start: &PlanarPoint,
    speed: f64,
    cfg: &TraceConfig,
) -> Result<PlanarPath, StreamlineError> {
    cfg.validate()?;
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(StreamlineError::InvalidConfig("speed must be positive".into()));
    }
    let psi_0 = assign_stream_value(field, start)?;
    let separation = step_drift_budget(field);
    for (h, value) in field.obstacle_stream_values().into_iter().enumerate() {
        if (psi_0 - value).abs() <= separation {
            return Err(StreamlineError::StagnationStart {
                x: start.x,
                y: start.y,
                obstacle: h,
            });
        }
    }
    field.sample_velocity_direction(start)?;

    let steps = (cfg.horizon / cfg.step_dt).round().max(1.0) as usize;
    let dt = cfg.horizon / steps as f64;
    let mut times = vec![0.0];
    let mut points = vec![*start];
    let mut p = *start;
    let shifted = |p: &PlanarPoint, k: (f64, f64), s: f64| PlanarPoint::new(p.x + s * k.0, p.y + s * k.1);
    'outer: for n in 1..=steps {
        let mut stages = [(0.0, 0.0); 4];
        let offsets = [0.0, 0.5 * dt, 0.5 * dt, dt];
        for i in 0..4 {
            let q = if i == 0 { p } else { shifted(&p, stages[i - 1], offsets[i]) };
            match velocity(field, &q, speed)? {
                Some(k) => stages[i] = k,
                None => break 'outer,
            }
        }
        let (k1, k2, k3, k4) = (stages[0], stages[1], stages[2], stages[3]);
        let next = PlanarPoint::new(
            p.x + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            p.y + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
        let t = n as f64 * dt;
        let psi = match field.sample_psi(&next) {
            Ok(v) => v,
            Err(FieldError::OutOfDomain { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        let drift = (psi - psi_0).abs();
        if drift > cfg.psi_drift_tolerance {
            return Err(StreamlineError::DriftExceeded {
                time: t,
                drift,
                tolerance: cfg.psi_drift_tolerance,
            });
        }
        times.push(t);
        points.push(next);
        p = next;
    }
    Ok(PlanarPath { times, points, psi_0 })
}

/// Largest `|Ψ(r_d(t_k)) − Ψ₀| / k` over the path sample times, the drift
/// of a fitted reference per integration step.
pub fn reference_drift_rate(
    field: &StreamFieldGrid,
    path: &PlanarPath,
    reference: &ReferenceTrajectory,
) -> Result<f64, FieldError> {
    path.times.iter().enumerate().try_fold(0.0f64, |worst, (k, &t)| {
        let r = reference.derivative(0, t);
        let drift = (field.sample_psi(&PlanarPoint::new(r.x, r.y))? - path.psi_0).abs();
        Ok(worst.max(drift / k.max(1) as f64))
    })
}

/// Writes `t,x,y` rows with a header.
pub fn write_path_csv<W: Write>(path: &PlanarPath, mut out: W) -> io::Result<()> {
    writeln!(out, "t,x,y")?;
    for (t, p) in path.times.iter().zip(&path.points) {
        writeln!(out, "{t},{},{}", p.x, p.y)?;
    }
    Ok(())
}
