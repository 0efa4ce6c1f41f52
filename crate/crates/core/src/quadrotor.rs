//! Rigid-body quadrotor with the thrust dynamically extended by two
//! integrators.
//!
//! State (14): position, velocity, 3-2-1 Euler angles `(φ, θ, ψ)`, body
//! angular velocity, thrust `p` and thrust rate `ṗ`. Input: thrust
//! acceleration `u_p = p̈` and the body torques.

use nalgebra::{Matrix3, Matrix4, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pitch guard band: `|θ|` must stay below `π/2 − GIMBAL_EPSILON`.
pub const GIMBAL_EPSILON: f64 = 0.01;

pub type StateVector = SVector<f64, 14>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("pitch {pitch} rad is within the gimbal-lock guard band")]
    GimbalLock { pitch: f64 },
    #[error("wrench requires a negative squared speed on rotor {rotor} ({squared_speed:e} rad²/s²)")]
    InfeasibleWrench { rotor: usize, squared_speed: f64 },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

/// Airframe and actuator constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// m/s²
    pub gravity: f64,
    /// Rotor distance from the center, m
    pub arm_length: f64,
    /// Diagonal inertia `(I_x, I_y, I_z)`, kg·m²
    pub inertia: Vector3<f64>,
    /// Rotor thrust coefficient `b`, N·s²
    pub thrust_coeff: f64,
    /// Rotor drag-torque coefficient `k`, N·m·s²
    pub drag_coeff: f64,
    /// Rotor speed limit, rad/s
    pub omega_max: f64,
}

impl QuadParams {
    /// The 0.468 kg reference airframe with the given rotor speed limit.
    pub fn reference_airframe(omega_max: f64) -> Self {
        Self {
            mass: 0.468,
            gravity: 9.81,
            arm_length: 0.225,
            inertia: Vector3::new(4.856e-3, 4.856e-3, 8.801e-3),
            thrust_coeff: 2.98e-6,
            drag_coeff: 1.14e-7,
            omega_max,
        }
    }

    pub fn validate(&self) -> Result<(), QuadError> {
        let values = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("arm_length", self.arm_length),
            ("inertia_x", self.inertia.x),
            ("inertia_y", self.inertia.y),
            ("inertia_z", self.inertia.z),
            ("thrust_coeff", self.thrust_coeff),
            ("drag_coeff", self.drag_coeff),
            ("omega_max", self.omega_max),
        ];
        for (name, v) in values {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QuadError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Rotor speed that holds the vehicle at hover, `√(mg / 4b)`.
    pub fn hover_rotor_speed(&self) -> f64 {
        (self.hover_thrust() / (4.0 * self.thrust_coeff)).sqrt()
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.inertia)
    }
}

/// Extended quadrotor state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Roll, pitch, yaw.
    pub euler: Vector3<f64>,
    /// Angular velocity in body axes.
    pub body_rates: Vector3<f64>,
    /// Total rotor thrust, N
    pub thrust: f64,
    /// N/s
    pub thrust_rate: f64,
}

impl ExtendedState {
    /// At rest, level, holding hover thrust.
    pub fn hover_at(position: Vector3<f64>, params: &QuadParams) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            euler: Vector3::zeros(),
            body_rates: Vector3::zeros(),
            thrust: params.hover_thrust(),
            thrust_rate: 0.0,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut v = StateVector::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v.fixed_rows_mut::<3>(6).copy_from(&self.euler);
        v.fixed_rows_mut::<3>(9).copy_from(&self.body_rates);
        v[12] = self.thrust;
        v[13] = self.thrust_rate;
        v
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            position: v.fixed_rows::<3>(0).into(),
            velocity: v.fixed_rows::<3>(3).into(),
            euler: v.fixed_rows::<3>(6).into(),
            body_rates: v.fixed_rows::<3>(9).into(),
            thrust: v[12],
            thrust_rate: v[13],
        }
    }

    pub fn roll(&self) -> f64 {
        self.euler.x
    }

    pub fn pitch(&self) -> f64 {
        self.euler.y
    }

    pub fn yaw(&self) -> f64 {
        self.euler.z
    }
}

/// Physical rotor wrench: total thrust and body torques.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            thrust: v[0],
            torque: Vector3::new(v[1], v[2], v[3]),
        }
    }
}

/// Input of the extended model: `u_p = p̈` and the body torques.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedInput {
    pub thrust_accel: f64,
    pub torque: Vector3<f64>,
}

impl ExtendedInput {
    pub fn zero() -> Self {
        Self {
            thrust_accel: 0.0,
            torque: Vector3::zeros(),
        }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust_accel, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            thrust_accel: v[0],
            torque: Vector3::new(v[1], v[2], v[3]),
        }
    }
}

/// Rotor angular speeds, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorSpeeds(pub [f64; 4]);

impl RotorSpeeds {
    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::MAX, f64::min)
    }
}

/// Body-to-inertial rotation for 3-2-1 Euler angles `(φ, θ, ψ)`.
pub fn rotation_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let (sp, cp) = euler.z.sin_cos();
    Matrix3::new(
        ct * cp,
        st * cp * sf - sp * cf,
        st * cp * cf + sp * sf,
        ct * sp,
        st * sp * sf + cp * cf,
        st * sp * cf - cp * sf,
        -st,
        ct * sf,
        ct * cf,
    )
}

fn check_pitch(pitch: f64) -> Result<(), QuadError> {
    if pitch.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_EPSILON || !pitch.is_finite() {
        Err(QuadError::GimbalLock { pitch })
    } else {
        Ok(())
    }
}

/// `Γ` with `ω = Γ·(φ̇, θ̇, ψ̇)`.
pub fn euler_rate_matrix(roll: f64, pitch: f64) -> Result<Matrix3<f64>, QuadError> {
    check_pitch(pitch)?;
    let (sf, cf) = roll.sin_cos();
    let (st, ct) = pitch.sin_cos();
    Ok(Matrix3::new(
        1.0, 0.0, -st, //
        0.0, cf, ct * sf, //
        0.0, -sf, cf * ct,
    ))
}

/// Closed-form `Γ⁻¹`, mapping body rates to Euler angle rates.
pub fn euler_rates(euler: &Vector3<f64>, body_rates: &Vector3<f64>) -> Result<Vector3<f64>, QuadError> {
    check_pitch(euler.y)?;
    let (sf, cf) = euler.x.sin_cos();
    let (st, ct) = euler.y.sin_cos();
    let (p, q, r) = (body_rates.x, body_rates.y, body_rates.z);
    let coupled = q * sf + r * cf;
    Ok(Vector3::new(p + coupled * st / ct, q * cf - r * sf, coupled / ct))
}

/// Maps squared rotor speeds to `(p, τ_φ, τ_θ, τ_ψ)`.
pub fn mixing_matrix(params: &QuadParams) -> Matrix4<f64> {
    let b = params.thrust_coeff;
    let bl = b * params.arm_length;
    let k = params.drag_coeff;
    Matrix4::new(
        b, b, b, b, //
        0.0, -bl, 0.0, bl, //
        -bl, 0.0, bl, 0.0, //
        -k, k, -k, k,
    )
}

pub fn mix(rotors: &RotorSpeeds, params: &QuadParams) -> Wrench {
    let squared = Vector4::from_iterator(rotors.0.iter().map(|w| w * w));
    Wrench::from_vector(&(mixing_matrix(params) * squared))
}

/// Squared rotor speeds realizing a wrench (closed-form inverse of the
/// mixing matrix). May be negative.
pub fn squared_rotor_speeds(wrench: &Wrench, params: &QuadParams) -> [f64; 4] {
    let bl = params.thrust_coeff * params.arm_length;
    let a = wrench.thrust / params.thrust_coeff;
    let roll = wrench.torque.x / bl;
    let pitch = wrench.torque.y / bl;
    let yaw = wrench.torque.z / params.drag_coeff;
    let odd = 0.5 * (a - yaw);
    let even = 0.5 * (a + yaw);
    [
        0.5 * (odd - pitch),
        0.5 * (even - roll),
        0.5 * (odd + pitch),
        0.5 * (even + roll),
    ]
}

/// Rotor speeds realizing a wrench. Exceeding `omega_max` is not an error
/// here; the safety check is done on the logged speeds.
pub fn unmix(wrench: &Wrench, params: &QuadParams) -> Result<RotorSpeeds, QuadError> {
    let squared = squared_rotor_speeds(wrench, params);
    if let Some(rotor) = squared.iter().position(|s| *s < 0.0 || !s.is_finite()) {
        return Err(QuadError::InfeasibleWrench {
            rotor,
            squared_speed: squared[rotor],
        });
    }
    Ok(RotorSpeeds(squared.map(f64::sqrt)))
}

/// Time derivative of the extended state.
pub fn dynamics(
    state: &ExtendedState,
    input: &ExtendedInput,
    params: &QuadParams,
) -> Result<StateVector, QuadError> {
    let rotation = rotation_matrix(&state.euler);
    let thrust_axis = rotation.column(2).into_owned();
    let accel = thrust_axis * (state.thrust / params.mass) - Vector3::z() * params.gravity;
    let euler_dot = euler_rates(&state.euler, &state.body_rates)?;
    let w = state.body_rates;
    let jw = params.inertia.component_mul(&w);
    let omega_dot = (input.torque - w.cross(&jw)).component_div(&params.inertia);

    let mut d = StateVector::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&state.velocity);
    d.fixed_rows_mut::<3>(3).copy_from(&accel);
    d.fixed_rows_mut::<3>(6).copy_from(&euler_dot);
    d.fixed_rows_mut::<3>(9).copy_from(&omega_dot);
    d[12] = state.thrust_rate;
    d[13] = input.thrust_accel;
    Ok(d)
}

/// One classical RK4 step with the input held over the step.
pub fn step_rk4(
    state: &ExtendedState,
    input: &ExtendedInput,
    dt: f64,
    params: &QuadParams,
) -> Result<ExtendedState, QuadError> {
    let x0 = state.to_vector();
    let f = |x: &StateVector| dynamics(&ExtendedState::from_vector(x), input, params);
    let k1 = f(&x0)?;
    let k2 = f(&(x0 + k1 * (0.5 * dt)))?;
    let k3 = f(&(x0 + k2 * (0.5 * dt)))?;
    let k4 = f(&(x0 + k3 * dt))?;
    let x1 = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    Ok(ExtendedState::from_vector(&x1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn params() -> QuadParams {
        QuadParams::reference_airframe(800.0)
    }

    #[test]
    fn rotation_special_cases() {
        assert_eq!(rotation_matrix(&Vector3::zeros()), Matrix3::identity());
        let r = rotation_matrix(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let mapped = r * Vector3::x();
        assert!((mapped - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn euler_rate_matrix_cases() {
        assert_eq!(euler_rate_matrix(0.0, 0.0).unwrap(), Matrix3::identity());
        assert!(matches!(
            euler_rate_matrix(0.2, std::f64::consts::FRAC_PI_2),
            Err(QuadError::GimbalLock { .. })
        ));
        assert!(euler_rate_matrix(0.0, -std::f64::consts::FRAC_PI_2 + 0.005).is_err());
        assert!(euler_rate_matrix(0.0, std::f64::consts::FRAC_PI_2 - 0.02).is_ok());
    }

    #[test]
    fn mixing_examples() {
        let p = params();
        let w = 500.0;
        let u = mix(&RotorSpeeds([w; 4]), &p);
        assert!((u.thrust - 4.0 * p.thrust_coeff * w * w).abs() < 1e-12);
        assert_eq!(u.torque, Vector3::zeros());

        let u = mix(&RotorSpeeds([0.0, w, 0.0, w]), &p);
        assert!((u.thrust - 2.0 * p.thrust_coeff * w * w).abs() < 1e-12);
        assert!(u.torque.x.abs() < 1e-15 && u.torque.y.abs() < 1e-15);
        assert!((u.torque.z - 2.0 * p.drag_coeff * w * w).abs() < 1e-15);

        let u = mix(&RotorSpeeds([620.6; 4]), &p);
        assert!((u.thrust - 4.591).abs() < 1e-3, "thrust {}", u.thrust);
    }

    #[test]
    fn unmix_examples() {
        let p = params();
        let w = 433.0;
        let rotors = unmix(
            &Wrench {
                thrust: 4.0 * p.thrust_coeff * w * w,
                torque: Vector3::zeros(),
            },
            &p,
        )
        .unwrap();
        for r in rotors.0 {
            assert!((r - w).abs() < 1e-9);
        }

        let hover = unmix(
            &Wrench {
                thrust: p.mass * p.gravity,
                torque: Vector3::zeros(),
            },
            &p,
        )
        .unwrap();
        let expected = (p.mass * p.gravity / (4.0 * p.thrust_coeff)).sqrt();
        for r in hover.0 {
            assert!((r - expected).abs() < 1e-9);
            assert!((r - 620.6).abs() < 0.05);
        }

        let err = unmix(
            &Wrench {
                thrust: 0.0,
                torque: Vector3::new(1.0, 0.0, 0.0),
            },
            &p,
        )
        .unwrap_err();
        assert!(matches!(err, QuadError::InfeasibleWrench { rotor: 1, .. }));
    }

    #[test]
    fn mixing_matrix_is_invertible_and_inverse_matches_lu() {
        let p = params();
        let m = mixing_matrix(&p);
        assert!(m.determinant().abs() > 0.0);
        let u = Wrench {
            thrust: 5.1,
            torque: Vector3::new(0.01, -0.02, 0.003),
        };
        let lu = m.lu().solve(&u.as_vector()).unwrap();
        let closed = squared_rotor_speeds(&u, &p);
        for i in 0..4 {
            assert!((lu[i] - closed[i]).abs() <= 1e-9 * lu[i].abs());
        }
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = params();
        let s = ExtendedState::hover_at(Vector3::new(1.0, 2.0, 3.0), &p);
        let d = dynamics(&s, &ExtendedInput::zero(), &p).unwrap();
        assert!(d.norm() < 1e-15);
        let next = step_rk4(&s, &ExtendedInput::zero(), 0.01, &p).unwrap();
        assert!((next.to_vector() - s.to_vector()).norm() < 1e-12);
    }

    #[test]
    fn double_thrust_accelerates_upwards() {
        let p = params();
        let mut s = ExtendedState::hover_at(Vector3::zeros(), &p);
        s.thrust = 2.0 * p.mass * p.gravity;
        let d = dynamics(&s, &ExtendedInput::zero(), &p).unwrap();
        assert!((d[5] - p.gravity).abs() < 1e-12);
        assert!(d[3].abs() < 1e-15 && d[4].abs() < 1e-15);
    }

    #[test]
    fn free_fall_is_exact() {
        let p = params();
        let mut s = ExtendedState::hover_at(Vector3::new(0.0, 0.0, 100.0), &p);
        s.thrust = 0.0;
        let dt = 0.01;
        for _ in 0..300 {
            s = step_rk4(&s, &ExtendedInput::zero(), dt, &p).unwrap();
        }
        let t: f64 = 3.0;
        assert!((s.position.z - (100.0 - 0.5 * p.gravity * t * t)).abs() < 1e-9);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let p = params();
        let input = ExtendedInput {
            thrust_accel: 0.8,
            torque: Vector3::new(2e-4, -1.5e-4, 1e-4),
        };
        let mut start = ExtendedState::hover_at(Vector3::zeros(), &p);
        start.body_rates = Vector3::new(0.3, -0.2, 0.5);
        let run = |dt: f64| {
            let n = (2.0 / dt).round() as usize;
            let mut s = start;
            for _ in 0..n {
                s = step_rk4(&s, &input, dt, &p).unwrap();
            }
            s.to_vector()
        };
        let reference = run(1e-4);
        let e1 = (run(0.04) - reference).norm();
        let e2 = (run(0.02) - reference).norm();
        let ratio = e1 / e2;
        assert!(ratio > 13.0 && ratio < 19.0, "error ratio {ratio}");
    }

    #[test]
    fn torque_free_rotation_conserves_energy() {
        let mut p = params();
        p.inertia = Vector3::new(4.856e-3, 6.1e-3, 8.801e-3);
        let mut s = ExtendedState::hover_at(Vector3::zeros(), &p);
        s.body_rates = Vector3::new(0.05, -0.03, 1.5);
        let energy = |s: &ExtendedState| 0.5 * s.body_rates.dot(&p.inertia.component_mul(&s.body_rates));
        let e0 = energy(&s);
        for _ in 0..10_000 {
            s = step_rk4(&s, &ExtendedInput::zero(), 1e-3, &p).unwrap();
        }
        assert!(((energy(&s) - e0) / e0).abs() <= 1e-6);
    }

    // Second implementation of the model built on nalgebra's own Euler
    // rotation and a linear solve for the Euler rates.
    fn reference_dynamics(s: &ExtendedState, u: &ExtendedInput, p: &QuadParams) -> StateVector {
        let rot = Rotation3::from_euler_angles(s.euler.x, s.euler.y, s.euler.z);
        let accel = rot * Vector3::new(0.0, 0.0, s.thrust / p.mass) - Vector3::new(0.0, 0.0, p.gravity);
        let gamma = euler_rate_matrix(s.euler.x, s.euler.y).unwrap();
        let euler_dot = gamma.lu().solve(&s.body_rates).unwrap();
        let j = p.inertia_matrix();
        let omega_dot = j.try_inverse().unwrap() * (u.torque - s.body_rates.cross(&(j * s.body_rates)));
        let mut d = StateVector::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&s.velocity);
        d.fixed_rows_mut::<3>(3).copy_from(&accel);
        d.fixed_rows_mut::<3>(6).copy_from(&euler_dot);
        d.fixed_rows_mut::<3>(9).copy_from(&omega_dot);
        d[12] = s.thrust_rate;
        d[13] = u.thrust_accel;
        d
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(r in -3.1f64..3.1, t in -1.5f64..1.5, y in -3.1f64..3.1) {
            let m = rotation_matrix(&Vector3::new(r, t, y));
            prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
            let reference = Rotation3::from_euler_angles(r, t, y);
            prop_assert!((m - reference.matrix()).norm() < 1e-12);
        }

        #[test]
        fn euler_rate_determinant_is_cos_pitch(r in -3.1f64..3.1, t in -1.5f64..1.5) {
            let g = euler_rate_matrix(r, t).unwrap();
            prop_assert!((g.determinant() - t.cos()).abs() < 1e-12);
        }

        #[test]
        fn mix_unmix_round_trip(w in proptest::array::uniform4(1.0f64..1200.0)) {
            let p = params();
            let back = unmix(&mix(&RotorSpeeds(w), &p), &p).unwrap();
            for (got, want) in back.0.iter().zip(w) {
                prop_assert!((got - want).abs() <= 1e-10 * want.max(100.0));
            }
        }

        #[test]
        fn dynamics_matches_independent_model(
            pos in proptest::array::uniform3(-5.0f64..5.0),
            vel in proptest::array::uniform3(-3.0f64..3.0),
            euler in proptest::array::uniform3(-1.2f64..1.2),
            rates in proptest::array::uniform3(-4.0f64..4.0),
            thrust in 0.5f64..12.0,
            thrust_rate in -5.0f64..5.0,
            torque in proptest::array::uniform3(-0.05f64..0.05),
            up in -20.0f64..20.0,
        ) {
            let p = params();
            let s = ExtendedState {
                position: Vector3::from(pos),
                velocity: Vector3::from(vel),
                euler: Vector3::from(euler),
                body_rates: Vector3::from(rates),
                thrust,
                thrust_rate,
            };
            let u = ExtendedInput { thrust_accel: up, torque: Vector3::from(torque) };
            let d = dynamics(&s, &u, &p).unwrap();
            let r = reference_dynamics(&s, &u, &p);
            for i in 0..14 {
                prop_assert!((d[i] - r[i]).abs() <= 1e-8 * r[i].abs().max(1.0));
            }
        }
    }
}
