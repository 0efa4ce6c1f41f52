//! Input–output feedback linearization with dynamic extension.
//!
//! With thrust extended by two integrators, all four inputs `ũ = (u_p, τ)`
//! appear in the fourth derivative of position:
//!
//! ```text
//! m·r⁗ = O₁·Θ + O₂,     Θ = (p̈, φ̈, θ̈, ψ̈) = O₃·ũ + O₄
//! ```
//!
//! The controller picks a snap command `s` from the tracking errors and a yaw
//! acceleration `u_ψ` from the yaw state, then inverts the stacked 4×4 map for
//! `ũ`. The rotor speeds follow from the physical wrench `(p, τ)`.

use crate::quadrotor::{
    euler_rate_matrix, euler_rates, rotation_matrix, unmix, ExtendedInput, ExtendedState,
    QuadError, QuadParams, RotorSpeeds, Wrench,
};
use crate::streamline::ReferenceSample;
use nalgebra::{Complex, Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Thrust below `THRUST_FLOOR_RATIO·m·g` makes `O₁` rank deficient.
pub const THRUST_FLOOR_RATIO: f64 = 0.1;
pub const MAX_DECOUPLING_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("thrust {thrust} N is below the decoupling floor {floor} N")]
    ThrustSingular { thrust: f64, floor: f64 },
    #[error("decoupling matrix is singular (condition number {condition:e})")]
    SingularDecoupling { condition: f64 },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

/// `K1, K2` close the yaw loop, `K3..K6` the position loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterGains {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
}

impl Default for OuterGains {
    /// Position poles at −2, −3, −4, −5; yaw poles at −½ ± i√3/2.
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 1.0,
            k3: 14.0,
            k4: 71.0,
            k5: 154.0,
            k6: 120.0,
        }
    }
}

impl OuterGains {
    /// Positivity plus Routh–Hurwitz on both characteristic polynomials.
    pub fn validate(&self) -> Result<(), ControlError> {
        let all = [self.k1, self.k2, self.k3, self.k4, self.k5, self.k6];
        if all.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(ControlError::InvalidGains("all gains must be positive".into()));
        }
        // λ⁴ + a3λ³ + a2λ² + a1λ + a0
        let (a3, a2, a1, a0) = (self.k3, self.k4, self.k5, self.k6);
        let h2 = a3 * a2 - a1;
        let h3 = a1 * h2 - a3 * a3 * a0;
        if h2 <= 0.0 || h3 <= 0.0 {
            return Err(ControlError::InvalidGains(
                "position characteristic polynomial is not Hurwitz".into(),
            ));
        }
        Ok(())
    }

    /// Roots of `λ⁴ + K3λ³ + K4λ² + K5λ + K6`.
    pub fn position_poles(&self) -> Vec<Complex<f64>> {
        let companion = Matrix4::new(
            -self.k3, -self.k4, -self.k5, -self.k6, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        );
        companion.complex_eigenvalues().iter().copied().collect()
    }
}

/// State-dependent terms of the decoupling map.
///
/// `b1`, `b2` are in body axes (`ω̇ = B̃₁·(φ̈, θ̈, ψ̈) + B̃₂`); `o1`, `o2` are in
/// inertial axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryTerms {
    pub b1: Matrix3<f64>,
    pub b2: Vector3<f64>,
    pub o1: Matrix3x4<f64>,
    pub o2: Vector3<f64>,
    pub o3: Matrix4<f64>,
    pub o4: Vector4<f64>,
}

pub fn geometry_terms(state: &ExtendedState, params: &QuadParams) -> Result<GeometryTerms, ControlError> {
    let floor = THRUST_FLOOR_RATIO * params.hover_thrust();
    if !(state.thrust >= floor) {
        return Err(ControlError::ThrustSingular {
            thrust: state.thrust,
            floor,
        });
    }
    let (roll, pitch) = (state.euler.x, state.euler.y);
    let gamma = euler_rate_matrix(roll, pitch)?;
    let rates = euler_rates(&state.euler, &state.body_rates)?;
    let (roll_dot, pitch_dot, yaw_dot) = (rates.x, rates.y, rates.z);

    // Body-axis components of the Euler rotation axes.
    let i_b = Vector3::x();
    let j_2: Vector3<f64> = gamma.column(1).into();
    let k_1: Vector3<f64> = gamma.column(2).into();
    let b1 = gamma;
    let b2 = pitch_dot * yaw_dot * k_1.cross(&j_2) + roll_dot * (yaw_dot * k_1 + pitch_dot * j_2).cross(&i_b);

    let rotation = rotation_matrix(&state.euler);
    let j_b_world: Vector3<f64> = rotation.column(1).into();
    let k_b_world: Vector3<f64> = rotation.column(2).into();
    let j_2_world = rotation * j_2;
    let k_1_world = rotation * k_1;
    let omega_world = rotation * state.body_rates;
    let b2_world = rotation * b2;

    let p = state.thrust;
    let o1 = Matrix3x4::from_columns(&[
        k_b_world,
        -p * j_b_world,
        p * j_2_world.cross(&k_b_world),
        p * k_1_world.cross(&k_b_world),
    ]);
    let o2 = p * b2_world.cross(&k_b_world)
        + omega_world.cross(&omega_world.cross(&(p * k_b_world)))
        + 2.0 * state.thrust_rate * omega_world.cross(&k_b_world);

    let b1_inv = b1.try_inverse().ok_or(QuadError::GimbalLock { pitch })?;
    let j_inv = Matrix3::from_diagonal(&params.inertia.map(|i| 1.0 / i));
    let w = state.body_rates;
    let gyroscopic = w.cross(&params.inertia.component_mul(&w));
    let mut o3 = Matrix4::zeros();
    o3[(0, 0)] = 1.0;
    o3.fixed_view_mut::<3, 3>(1, 1).copy_from(&(b1_inv * j_inv));
    let angular = -b1_inv * (b2 + j_inv * gyroscopic);
    let o4 = Vector4::new(0.0, angular.x, angular.y, angular.z);

    Ok(GeometryTerms { b1, b2, o1, o2, o3, o4 })
}

/// Acceleration and jerk implied by the state.
pub fn state_acceleration_jerk(state: &ExtendedState, params: &QuadParams) -> (Vector3<f64>, Vector3<f64>) {
    let rotation = rotation_matrix(&state.euler);
    let k_b: Vector3<f64> = rotation.column(2).into();
    let omega_world = rotation * state.body_rates;
    let acceleration = k_b * (state.thrust / params.mass) - Vector3::z() * params.gravity;
    let jerk = k_b * (state.thrust_rate / params.mass) + omega_world.cross(&k_b) * (state.thrust / params.mass);
    (acceleration, jerk)
}

/// Snap command from the tracking errors of orders 0–3, plus the reference
/// snap as feedforward (zero it in the reference to get the pure feedback
/// law).
pub fn outer_position_law(
    state: &ExtendedState,
    reference: &ReferenceSample,
    gains: &OuterGains,
    params: &QuadParams,
) -> Vector3<f64> {
    let (acceleration, jerk) = state_acceleration_jerk(state, params);
    reference.snap
        + gains.k3 * (reference.jerk - jerk)
        + gains.k4 * (reference.acceleration - acceleration)
        + gains.k5 * (reference.velocity - state.velocity)
        + gains.k6 * (reference.position - state.position)
}

/// Commanded yaw acceleration regulating yaw to zero.
pub fn yaw_law(yaw: f64, yaw_rate: f64, gains: &OuterGains) -> f64 {
    -gains.k1 * yaw_rate - gains.k2 * yaw
}

fn condition_number(m: &Matrix4<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `[O₁O₃; e₄ᵀO₃]·ũ = [m·s − O₁O₄ − O₂; u_ψ − O₄(4)]`.
pub fn solve_extended_input(
    snap: &Vector3<f64>,
    yaw_accel: f64,
    terms: &GeometryTerms,
    params: &QuadParams,
) -> Result<ExtendedInput, ControlError> {
    let (matrix, rhs) = decoupling_system(snap, yaw_accel, terms, params);
    let condition = condition_number(&matrix);
    if !(condition <= MAX_DECOUPLING_CONDITION) {
        return Err(ControlError::SingularDecoupling { condition });
    }
    let u = matrix
        .lu()
        .solve(&rhs)
        .ok_or(ControlError::SingularDecoupling { condition })?;
    Ok(ExtendedInput::from_vector(&u))
}

/// The stacked decoupling matrix and right-hand side.
pub fn decoupling_system(
    snap: &Vector3<f64>,
    yaw_accel: f64,
    terms: &GeometryTerms,
    params: &QuadParams,
) -> (Matrix4<f64>, Vector4<f64>) {
    let o1o3 = terms.o1 * terms.o3;
    let mut matrix = Matrix4::zeros();
    matrix.fixed_view_mut::<3, 4>(0, 0).copy_from(&o1o3);
    matrix.set_row(3, &terms.o3.row(3));
    let top = params.mass * snap - terms.o1 * terms.o4 - terms.o2;
    let rhs = Vector4::new(top.x, top.y, top.z, yaw_accel - terms.o4[3]);
    (matrix, rhs)
}

/// Everything one control update produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub input: ExtendedInput,
    pub wrench: Wrench,
    pub rotors: RotorSpeeds,
    pub snap_command: Vector3<f64>,
    pub yaw_accel: f64,
}

pub fn control_step(
    state: &ExtendedState,
    reference: &ReferenceSample,
    gains: &OuterGains,
    params: &QuadParams,
) -> Result<ControlOutput, ControlError> {
    let terms = geometry_terms(state, params)?;
    let snap_command = outer_position_law(state, reference, gains, params);
    let yaw_rate = euler_rates(&state.euler, &state.body_rates)?.z;
    let yaw_accel = yaw_law(state.yaw(), yaw_rate, gains);
    let input = solve_extended_input(&snap_command, yaw_accel, &terms, params)?;
    let wrench = Wrench {
        thrust: state.thrust,
        torque: input.torque,
    };
    let rotors = unmix(&wrench, params)?;
    Ok(ControlOutput {
        input,
        wrench,
        rotors,
        snap_command,
        yaw_accel,
    })
}
