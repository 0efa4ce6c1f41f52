//! Closed-form ideal flow around circular cylinders.
//!
//! The complex potential is a uniform stream superposed with one doublet per
//! failed vehicle:
//!
//! ```text
//! f(z) = Φ + iΨ = u∞ Σ_h (z − z_h + a_h² / (z − z_h))
//! ```
//!
//! With a single obstacle the zero streamline is exactly the circle
//! `|z − z_h| = a_h`. With several obstacles the bounding streamlines are no
//! longer circles, so this evaluator is used as an analytic oracle for the
//! grid solver and as a field backend for single-obstacle cases only.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance from a doublet center below which evaluation is refused.
pub const DEFAULT_POLE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("point ({x}, {y}) is within {epsilon} m of the center of obstacle {obstacle}")]
    PoleSingularity {
        obstacle: usize,
        x: f64,
        y: f64,
        epsilon: f64,
    },
    #[error("invalid flow description: {0}")]
    InvalidFlow(String),
}

/// A point in the horizontal plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_to(&self, other: &PlanarPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn as_complex(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }
}

/// Unsafe zone wrapping a failed vehicle: a vertical cylinder of radius
/// `radius` centered on `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub center: PlanarPoint,
    pub radius: f64,
}

impl ObstacleSpec {
    pub const fn new(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: PlanarPoint::new(x, y),
            radius,
        }
    }

    /// Closed-disk membership.
    pub fn contains(&self, p: &PlanarPoint) -> bool {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Open-disk membership; points on the circle are outside.
    pub fn strictly_contains(&self, p: &PlanarPoint) -> bool {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// Checks radius positivity, finiteness and pairwise disjointness.
pub fn validate_obstacles(obstacles: &[ObstacleSpec]) -> Result<(), String> {
    for (i, o) in obstacles.iter().enumerate() {
        if !o.center.is_finite() {
            return Err(format!("obstacle {i} has a non-finite center"));
        }
        if !(o.radius > 0.0 && o.radius.is_finite()) {
            return Err(format!("obstacle {i} radius must be positive, got {}", o.radius));
        }
    }
    for i in 0..obstacles.len() {
        for j in (i + 1)..obstacles.len() {
            let (a, b) = (&obstacles[i], &obstacles[j]);
            if a.center.distance_to(&b.center) <= a.radius + b.radius {
                return Err(format!("obstacles {i} and {j} overlap"));
            }
        }
    }
    Ok(())
}

/// Uniform stream of speed `freestream` plus one doublet per obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticFlow {
    freestream: f64,
    obstacles: Vec<ObstacleSpec>,
    pole_epsilon: f64,
}

impl AnalyticFlow {
    pub fn new(freestream: f64, obstacles: Vec<ObstacleSpec>) -> Result<Self, FlowError> {
        if !(freestream > 0.0 && freestream.is_finite()) {
            return Err(FlowError::InvalidFlow(format!(
                "freestream must be positive, got {freestream}"
            )));
        }
        if obstacles.is_empty() {
            return Err(FlowError::InvalidFlow("at least one obstacle is required".into()));
        }
        validate_obstacles(&obstacles).map_err(FlowError::InvalidFlow)?;
        Ok(Self {
            freestream,
            obstacles,
            pole_epsilon: DEFAULT_POLE_EPSILON,
        })
    }

    pub fn with_pole_epsilon(mut self, epsilon: f64) -> Self {
        self.pole_epsilon = epsilon;
        self
    }

    pub fn freestream(&self) -> f64 {
        self.freestream
    }

    pub fn obstacles(&self) -> &[ObstacleSpec] {
        &self.obstacles
    }

    fn offsets(&self, point: &PlanarPoint) -> Result<Vec<(Complex64, f64)>, FlowError> {
        let z = point.as_complex();
        self.obstacles
            .iter()
            .enumerate()
            .map(|(h, o)| {
                let dz = z - o.center.as_complex();
                if dz.norm() < self.pole_epsilon {
                    Err(FlowError::PoleSingularity {
                        obstacle: h,
                        x: point.x,
                        y: point.y,
                        epsilon: self.pole_epsilon,
                    })
                } else {
                    Ok((dz, o.radius * o.radius))
                }
            })
            .collect()
    }

    /// Complex potential at `point`, returned as `(Φ, Ψ)`.
    pub fn eval_potential(&self, point: &PlanarPoint) -> Result<(f64, f64), FlowError> {
        let f: Complex64 = self
            .offsets(point)?
            .into_iter()
            .map(|(dz, a2)| dz + a2 / dz)
            .sum::<Complex64>()
            * self.freestream;
        Ok((f.re, f.im))
    }

    /// Stream function only.
    pub fn eval_psi(&self, point: &PlanarPoint) -> Result<f64, FlowError> {
        self.eval_potential(point).map(|(_, psi)| psi)
    }

    /// Flow velocity `(u, v) = (Re f′, −Im f′)`.
    pub fn eval_velocity(&self, point: &PlanarPoint) -> Result<(f64, f64), FlowError> {
        let df: Complex64 = self
            .offsets(point)?
            .into_iter()
            .map(|(dz, a2)| Complex64::new(1.0, 0.0) - a2 / (dz * dz))
            .sum::<Complex64>()
            * self.freestream;
        Ok((df.re, -df.im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_flow() -> AnalyticFlow {
        AnalyticFlow::new(1.0, vec![ObstacleSpec::new(0.0, 0.0, 1.0)]).unwrap()
    }

    // Real-arithmetic evaluation of one doublet term; independent of the
    // complex code path.
    fn psi_term(x: f64, y: f64, o: &ObstacleSpec) -> f64 {
        let dx = x - o.center.x;
        let dy = y - o.center.y;
        dy - o.radius * o.radius * dy / (dx * dx + dy * dy)
    }

    fn phi_term(x: f64, y: f64, o: &ObstacleSpec) -> f64 {
        let dx = x - o.center.x;
        let dy = y - o.center.y;
        dx + o.radius * o.radius * dx / (dx * dx + dy * dy)
    }

    #[test]
    fn circle_is_zero_streamline() {
        let flow = unit_flow();
        for k in 0..64 {
            let t = k as f64 * std::f64::consts::TAU / 64.0;
            let psi = flow.eval_psi(&PlanarPoint::new(t.cos(), t.sin())).unwrap();
            assert!(psi.abs() < 1e-15, "psi = {psi} at t = {t}");
        }
    }

    #[test]
    fn psi_above_single_cylinder() {
        let psi = unit_flow().eval_psi(&PlanarPoint::new(0.0, 2.0)).unwrap();
        assert!((psi - 1.5).abs() < 1e-15);
    }

    #[test]
    fn two_obstacles_match_term_by_term_sum() {
        let obs = vec![ObstacleSpec::new(-3.0, 0.0, 1.0), ObstacleSpec::new(3.0, 0.0, 1.0)];
        let flow = AnalyticFlow::new(1.0, obs.clone()).unwrap();
        let (phi, psi) = flow.eval_potential(&PlanarPoint::new(0.0, 10.0)).unwrap();
        let psi_ref: f64 = obs.iter().map(|o| psi_term(0.0, 10.0, o)).sum();
        let phi_ref: f64 = obs.iter().map(|o| phi_term(0.0, 10.0, o)).sum();
        assert!((psi - psi_ref).abs() < 1e-12);
        assert!((phi - phi_ref).abs() < 1e-12);
        // 2 * (10 - 10/109)
        assert!((psi - 2.0 * (10.0 - 10.0 / 109.0)).abs() < 1e-12);
    }

    #[test]
    fn stagnation_points_on_axis() {
        let flow = unit_flow();
        for x in [1.0, -1.0] {
            let (u, v) = flow.eval_velocity(&PlanarPoint::new(x, 0.0)).unwrap();
            assert!(u.abs() < 1e-15 && v.abs() < 1e-15);
        }
    }

    #[test]
    fn velocity_above_cylinder() {
        let (u, v) = unit_flow().eval_velocity(&PlanarPoint::new(0.0, 2.0)).unwrap();
        assert!((u - 1.25).abs() < 1e-15);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn far_field_velocity_is_summed_freestream() {
        let obs = vec![ObstacleSpec::new(-3.0, 0.0, 1.0), ObstacleSpec::new(3.0, 0.0, 0.5)];
        let flow = AnalyticFlow::new(2.0, obs).unwrap();
        let (u, v) = flow.eval_velocity(&PlanarPoint::new(60.0, 80.0)).unwrap();
        let expected = 2.0 * 2.0;
        assert!((u - expected).abs() / expected < 0.01);
        assert!(v.abs() / expected < 0.01);
    }

    #[test]
    fn pole_is_rejected() {
        let err = unit_flow().eval_potential(&PlanarPoint::new(0.0, 1e-12)).unwrap_err();
        assert!(matches!(err, FlowError::PoleSingularity { obstacle: 0, .. }));
        assert!(unit_flow().eval_velocity(&PlanarPoint::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn invalid_flows_are_rejected() {
        assert!(AnalyticFlow::new(0.0, vec![ObstacleSpec::new(0.0, 0.0, 1.0)]).is_err());
        assert!(AnalyticFlow::new(1.0, vec![]).is_err());
        assert!(AnalyticFlow::new(1.0, vec![ObstacleSpec::new(0.0, 0.0, -1.0)]).is_err());
        let overlapping = vec![ObstacleSpec::new(0.0, 0.0, 1.0), ObstacleSpec::new(1.5, 0.0, 1.0)];
        assert!(AnalyticFlow::new(1.0, overlapping).is_err());
    }

    fn two_body_flow() -> AnalyticFlow {
        AnalyticFlow::new(
            1.3,
            vec![ObstacleSpec::new(-2.0, 0.5, 1.0), ObstacleSpec::new(3.0, -1.0, 0.7)],
        )
        .unwrap()
    }

    fn far_enough(flow: &AnalyticFlow, p: &PlanarPoint) -> bool {
        flow.obstacles()
            .iter()
            .all(|o| p.distance_to(&o.center) >= 2.0 * o.radius)
    }

    proptest! {
        #[test]
        fn psi_is_harmonic(x in -8.0f64..8.0, y in -8.0f64..8.0) {
            let flow = two_body_flow();
            let p = PlanarPoint::new(x, y);
            prop_assume!(far_enough(&flow, &p));
            let h = 1e-3;
            let f = |dx: f64, dy: f64| flow.eval_psi(&PlanarPoint::new(x + dx, y + dy)).unwrap();
            let lap = (f(h, 0.0) + f(-h, 0.0) + f(0.0, h) + f(0.0, -h) - 4.0 * f(0.0, 0.0)) / (h * h);
            prop_assert!(lap.abs() <= 1e-4 * flow.freestream(), "laplacian {}", lap);
        }

        #[test]
        fn cauchy_riemann_and_velocity_agree(x in -8.0f64..8.0, y in -8.0f64..8.0) {
            let flow = two_body_flow();
            let p = PlanarPoint::new(x, y);
            prop_assume!(far_enough(&flow, &p));
            let h = 1e-5;
            let pot = |dx: f64, dy: f64| flow.eval_potential(&PlanarPoint::new(x + dx, y + dy)).unwrap();
            let (phi_xp, psi_xp) = pot(h, 0.0);
            let (phi_xm, psi_xm) = pot(-h, 0.0);
            let (phi_yp, psi_yp) = pot(0.0, h);
            let (phi_ym, psi_ym) = pot(0.0, -h);
            let phi_x = (phi_xp - phi_xm) / (2.0 * h);
            let phi_y = (phi_yp - phi_ym) / (2.0 * h);
            let psi_x = (psi_xp - psi_xm) / (2.0 * h);
            let psi_y = (psi_yp - psi_ym) / (2.0 * h);
            let scale = phi_x.abs().max(phi_y.abs()).max(1.0);
            prop_assert!((phi_x - psi_y).abs() <= 1e-6 * scale);
            prop_assert!((phi_y + psi_x).abs() <= 1e-6 * scale);
            let (u, v) = flow.eval_velocity(&p).unwrap();
            prop_assert!((u - psi_y).abs() <= 1e-6 * scale);
            prop_assert!((v + psi_x).abs() <= 1e-6 * scale);
        }
    }
}
