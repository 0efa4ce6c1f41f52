//! Piecewise-quintic reference fit with C³ joints.
//!
//! Each axis is fitted independently: the coefficients of all segments are
//! found together by equality-constrained least squares, solved through its
//! KKT system. Segments use a local time `τ ∈ [0, 1]` to keep the normal
//! equations well scaled.

use super::{PlanarPath, StreamlineError};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

const DEGREE: usize = 5;
const COEFFS: usize = DEGREE + 1;
/// Orders matched at every joint (value through jerk).
const JOINT_ORDERS: usize = 4;
const MIN_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Nominal segment length in seconds; the path duration is split into
    /// equal segments no longer than this.
    pub segment_duration: f64,
    /// Largest allowed distance between the fit and any path sample.
    pub max_deviation: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            segment_duration: 2.0,
            max_deviation: 0.05,
        }
    }
}

/// Desired position and its time derivatives through snap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub snap: Vector3<f64>,
}

impl ReferenceSample {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            jerk: Vector3::zeros(),
            snap: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    t0: f64,
    segment_duration: f64,
    x: Vec<[f64; COEFFS]>,
    y: Vec<[f64; COEFFS]>,
    z0: f64,
}

/// `d^order/dτ^order τ^i` evaluated at `tau`.
fn monomial_derivative(i: usize, order: usize, tau: f64) -> f64 {
    if order > i {
        return 0.0;
    }
    let falling: f64 = ((i - order + 1)..=i).map(|k| k as f64).product();
    falling * tau.powi((i - order) as i32)
}

fn eval_poly(c: &[f64; COEFFS], order: usize, tau: f64) -> f64 {
    (0..COEFFS).map(|i| c[i] * monomial_derivative(i, order, tau)).sum()
}

impl ReferenceTrajectory {
    pub fn start_time(&self) -> f64 {
        self.t0
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.duration()
    }

    pub fn duration(&self) -> f64 {
        self.segment_duration * self.x.len() as f64
    }

    pub fn altitude(&self) -> f64 {
        self.z0
    }

    pub fn segment_count(&self) -> usize {
        self.x.len()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let s = (t - self.t0) / self.segment_duration;
        let k = (s.floor().max(0.0) as usize).min(self.x.len() - 1);
        (k, s - k as f64)
    }

    /// Derivative of the given order at time `t`. Times outside the validity
    /// interval extrapolate the first or last segment.
    pub fn derivative(&self, order: usize, t: f64) -> Vector3<f64> {
        let (k, tau) = self.locate(t);
        let scale = self.segment_duration.powi(-(order as i32));
        let z = if order == 0 { self.z0 } else { 0.0 };
        Vector3::new(
            eval_poly(&self.x[k], order, tau) * scale,
            eval_poly(&self.y[k], order, tau) * scale,
            z,
        )
    }

    pub fn sample(&self, t: f64) -> ReferenceSample {
        ReferenceSample {
            position: self.derivative(0, t),
            velocity: self.derivative(1, t),
            acceleration: self.derivative(2, t),
            jerk: self.derivative(3, t),
            snap: self.derivative(4, t),
        }
    }
}

/// Constrained least-squares coefficients for one axis.
fn fit_axis(taus: &[(usize, f64)], values: &[f64], segments: usize) -> Option<Vec<[f64; COEFFS]>> {
    let unknowns = COEFFS * segments;
    let constraints = JOINT_ORDERS * (segments - 1);
    let size = unknowns + constraints;
    let mut kkt = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);

    for (&(k, tau), &v) in taus.iter().zip(values) {
        let base = COEFFS * k;
        let row: [f64; COEFFS] = std::array::from_fn(|i| tau.powi(i as i32));
        for i in 0..COEFFS {
            rhs[base + i] += row[i] * v;
            for j in 0..COEFFS {
                kkt[(base + i, base + j)] += row[i] * row[j];
            }
        }
    }
    for k in 0..segments - 1 {
        for order in 0..JOINT_ORDERS {
            let r = unknowns + JOINT_ORDERS * k + order;
            for i in 0..COEFFS {
                let left = monomial_derivative(i, order, 1.0);
                let right = -monomial_derivative(i, order, 0.0);
                let (a, b) = (COEFFS * k + i, COEFFS * (k + 1) + i);
                kkt[(r, a)] = left;
                kkt[(a, r)] = left;
                kkt[(r, b)] = right;
                kkt[(b, r)] = right;
            }
        }
    }
    let solution = kkt.lu().solve(&rhs)?;
    if solution.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(
        (0..segments)
            .map(|k| std::array::from_fn(|i| solution[COEFFS * k + i]))
            .collect(),
    )
}

pub fn fit_reference(path: &PlanarPath, z0: f64) -> Result<ReferenceTrajectory, StreamlineError> {
    fit_reference_with(path, z0, &FitConfig::default())
}

pub fn fit_reference_with(
    path: &PlanarPath,
    z0: f64,
    cfg: &FitConfig,
) -> Result<ReferenceTrajectory, StreamlineError> {
    let n = path.len();
    if n < MIN_SAMPLES || path.times.len() != n {
        return Err(StreamlineError::TooFewSamples(n));
    }
    if !(cfg.segment_duration > 0.0 && cfg.max_deviation > 0.0) {
        return Err(StreamlineError::InvalidConfig(
            "segment duration and deviation limit must be positive".into(),
        ));
    }
    if path.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(StreamlineError::InvalidConfig("path times must increase".into()));
    }
    let t0 = path.times[0];
    let duration = path.duration();
    let by_length = (duration / cfg.segment_duration).ceil().max(1.0) as usize;
    let segments = by_length.min((n / MIN_SAMPLES).max(1));
    let segment_duration = duration / segments as f64;

    let taus: Vec<(usize, f64)> = path
        .times
        .iter()
        .map(|&t| {
            let s = (t - t0) / segment_duration;
            let k = (s.floor().max(0.0) as usize).min(segments - 1);
            (k, s - k as f64)
        })
        .collect();
    let xs: Vec<f64> = path.points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = path.points.iter().map(|p| p.y).collect();
    let singular = || StreamlineError::InvalidConfig("fit system is singular".into());
    let x = fit_axis(&taus, &xs, segments).ok_or_else(singular)?;
    let y = fit_axis(&taus, &ys, segments).ok_or_else(singular)?;
    let reference = ReferenceTrajectory {
        t0,
        segment_duration,
        x,
        y,
        z0,
    };

    let deviation = path
        .times
        .iter()
        .zip(&path.points)
        .map(|(&t, p)| {
            let r = reference.derivative(0, t);
            (r.x - p.x).hypot(r.y - p.y)
        })
        .fold(0.0f64, f64::max);
    if !(deviation <= cfg.max_deviation) {
        return Err(StreamlineError::FitToleranceExceeded {
            deviation,
            limit: cfg.max_deviation,
        });
    }
    Ok(reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::PlanarPoint;

    fn sampled(duration: f64, dt: f64, f: impl Fn(f64) -> (f64, f64)) -> PlanarPath {
        let n = (duration / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        let points = times
            .iter()
            .map(|&t| {
                let (x, y) = f(t);
                PlanarPoint::new(x, y)
            })
            .collect();
        PlanarPath {
            times,
            points,
            psi_0: 0.0,
        }
    }

    #[test]
    fn straight_line_is_reproduced() {
        let v = 1.7;
        let path = sampled(9.0, 0.05, |t| (-3.0 + v * t, 2.0));
        let r = fit_reference(&path, 1.5).unwrap();
        assert!(r.segment_count() >= 4);
        for i in 0..=180 {
            let t = i as f64 * 0.05;
            let s = r.sample(t);
            assert!((s.position - Vector3::new(-3.0 + v * t, 2.0, 1.5)).norm() < 1e-9);
            assert!((s.velocity - Vector3::new(v, 0.0, 0.0)).norm() < 1e-9);
            assert!(s.acceleration.norm() < 1e-8);
            assert!(s.jerk.norm() < 1e-7);
        }
    }

    #[test]
    fn circular_arc_curvature() {
        let (radius, v) = (4.0, 1.2);
        let w = v / radius;
        let path = sampled(12.0, 0.02, |t| (radius * (w * t).cos(), radius * (w * t).sin()));
        let r = fit_reference(&path, 0.0).unwrap();
        for i in 1..60 {
            let t = i as f64 * 0.2;
            let a = r.derivative(2, t).norm();
            assert!((a - v * v / radius).abs() <= 0.05 * v * v / radius);
            assert!((r.derivative(1, t).norm() - v).abs() <= 0.05 * v);
        }
    }

    #[test]
    fn joints_are_c3() {
        let path = sampled(10.0, 0.02, |t| (t + 0.3 * (1.3 * t).sin(), (0.7 * t).cos()));
        let r = fit_reference(&path, 0.0).unwrap();
        let h = r.duration() / r.segment_count() as f64;
        for k in 1..r.segment_count() {
            let t = k as f64 * h;
            for order in 0..4 {
                let left = r.derivative(order, t - 1e-12);
                let right = r.derivative(order, t + 1e-12);
                assert!((left - right).norm() < 1e-7 * (1.0 + left.norm()), "order {order} at {t}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let path = sampled(10.0, 0.02, |t| (t + 0.3 * (1.3 * t).sin(), (0.7 * t).cos()));
        let r = fit_reference(&path, 0.0).unwrap();
        let h = 1e-4;
        for i in 1..100 {
            let t = 0.05 + i as f64 * 0.099;
            for order in 1..4 {
                let fd = (r.derivative(order - 1, t + h) - r.derivative(order - 1, t - h)) / (2.0 * h);
                let exact = r.derivative(order, t);
                assert!((fd - exact).norm() <= 1e-3 * exact.norm().max(1e-2), "order {order} t {t}");
            }
        }
    }

    #[test]
    fn irregular_path_exceeds_tolerance() {
        let path = sampled(6.0, 0.02, |t| (t, if (t * 5.0).floor() as i64 % 2 == 0 { 0.0 } else { 0.5 }));
        assert!(matches!(
            fit_reference(&path, 0.0),
            Err(StreamlineError::FitToleranceExceeded { .. })
        ));
    }

    #[test]
    fn short_paths_are_rejected() {
        let path = sampled(0.3, 0.05, |t| (t, 0.0));
        assert!(matches!(fit_reference(&path, 0.0), Err(StreamlineError::TooFewSamples(7))));
    }
}
