//! Full rigid-body dynamics with quaternion attitude.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector4};

use crate::error::{Result, SimError};
use crate::nominal::rk4_step;
use crate::params::QuadParams;

/// Length of the flat truth-state vector `(ξ, ξ̇, q_w, q_x, q_y, q_z, p, q, r)`.
pub const TRUTH_DIM: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-to-inertial rotation.
    pub attitude: UnitQuaternion<f64>,
    pub body_rates: Vector3<f64>,
}

impl TruthState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        TruthState {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            body_rates: Vector3::zeros(),
        }
    }

    pub fn to_array(&self) -> [f64; TRUTH_DIM] {
        let q = self.attitude.quaternion();
        let (p, v, w) = (&self.position, &self.velocity, &self.body_rates);
        [p.x, p.y, p.z, v.x, v.y, v.z, q.w, q.i, q.j, q.k, w.x, w.y, w.z]
    }

    /// Rebuilds a state, renormalizing the quaternion.
    pub fn from_slice(s: &[f64]) -> Self {
        TruthState {
            position: Vector3::new(s[0], s[1], s[2]),
            velocity: Vector3::new(s[3], s[4], s[5]),
            attitude: UnitQuaternion::from_quaternion(Quaternion::new(s[6], s[7], s[8], s[9])),
            body_rates: Vector3::new(s[10], s[11], s[12]),
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        self.attitude.to_rotation_matrix()
    }

    /// ZYX Euler angles `(φ, θ, ψ)`.
    pub fn euler(&self) -> Vector3<f64> {
        let (roll, pitch, yaw) = self.attitude.euler_angles();
        Vector3::new(roll, pitch, yaw)
    }

    /// Controller-visible state `(ξ, ξ̇, φ, θ, ψ)`.
    pub fn outer(&self) -> [f64; 9] {
        let e = self.euler();
        let (p, v) = (&self.position, &self.velocity);
        [p.x, p.y, p.z, v.x, v.y, v.z, e.x, e.y, e.z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Rotor thrusts after mixing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Allocation {
    pub thrusts: [f64; 4],
    /// At least one rotor hit a bound.
    pub saturated: bool,
}

/// Mixer: inverts the allocation map and clips each rotor to `[0, T_max/4]`.
#[derive(Clone, Debug)]
pub struct Mixer {
    inverse: Matrix4<f64>,
    rotor_max: f64,
}

impl Mixer {
    pub fn new(params: &QuadParams) -> Self {
        let inverse = params.allocation_matrix().try_inverse().expect("allocation map is invertible for d, β_c/α_c > 0");
        Mixer { inverse, rotor_max: params.rotor_thrust_max() }
    }

    pub fn allocate(&self, thrust: f64, torque: &Vector3<f64>) -> Allocation {
        let t = self.inverse * Vector4::new(thrust, torque.x, torque.y, torque.z);
        let mut saturated = false;
        let thrusts = [0, 1, 2, 3].map(|j| {
            let c = t[j].clamp(0.0, self.rotor_max);
            saturated |= c != t[j];
            c
        });
        Allocation { thrusts, saturated }
    }
}

/// One-shot allocation, see [`Mixer`].
pub fn allocate(thrust: f64, torque: &Vector3<f64>, params: &QuadParams) -> Allocation {
    Mixer::new(params).allocate(thrust, torque)
}

/// Truth dynamics with optional body-frame aero drag.
#[derive(Clone, Debug)]
pub struct TruthModel {
    pub params: QuadParams,
    pub aero: bool,
    allocation: Matrix4<f64>,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    k_aero: Matrix3<f64>,
}

impl TruthModel {
    pub fn new(params: QuadParams, aero: bool) -> Self {
        let inertia = params.inertia_matrix();
        TruthModel {
            allocation: params.allocation_matrix(),
            inertia_inv: inertia.try_inverse().expect("inertia validated positive definite"),
            inertia,
            k_aero: params.k_aero_matrix(),
            params,
            aero,
        }
    }

    /// Collective thrust and body torques produced by the rotor thrusts.
    pub fn wrench(&self, thrusts: &[f64; 4]) -> (f64, Vector3<f64>) {
        let w = self.allocation * Vector4::from_column_slice(thrusts);
        (w[0], Vector3::new(w[1], w[2], w[3]))
    }

    /// Body-frame drag `−(ΣΩ_j) K_aero R_iᵇ ξ̇` with `Ω_j = √(T_j/α_c)`.
    pub fn aero_force(&self, rotation: &Rotation3<f64>, velocity: &Vector3<f64>, thrusts: &[f64; 4]) -> Vector3<f64> {
        if !self.aero {
            return Vector3::zeros();
        }
        let omega_sum: f64 = thrusts.iter().map(|t| (t / self.params.thrust_coeff).sqrt()).sum::<f64>()
            * self.params.aero_speed_unit.from_rad_per_sec();
        -omega_sum * (self.k_aero * (rotation.transpose() * velocity))
    }

    fn field(&self, s: &[f64], thrusts: &[f64; 4], disturbance: &Vector3<f64>) -> Vec<f64> {
        let q = Quaternion::new(s[6], s[7], s[8], s[9]);
        // Quaternion kept un-normalized inside a step; the rotation uses its unit version.
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let vel = Vector3::new(s[3], s[4], s[5]);
        let omega = Vector3::new(s[10], s[11], s[12]);
        let (thrust, torque) = self.wrench(thrusts);

        let body_force = Vector3::new(0.0, 0.0, thrust) + self.aero_force(&rot, &vel, thrusts);
        let acc = self.params.gravity_vector() + rot * body_force / self.params.mass + disturbance;
        let q_dot = q * Quaternion::from_imag(omega) * 0.5;
        let omega_dot = self.inertia_inv * (torque - omega.cross(&(self.inertia * omega)));
        vec![
            vel.x,
            vel.y,
            vel.z,
            acc.x,
            acc.y,
            acc.z,
            q_dot.w,
            q_dot.i,
            q_dot.j,
            q_dot.k,
            omega_dot.x,
            omega_dot.y,
            omega_dot.z,
        ]
    }

    /// Time derivative of the flat state. `disturbance` is an inertial
    /// acceleration added to the translational dynamics.
    pub fn derivative(&self, s: &TruthState, thrusts: &[f64; 4], disturbance: &Vector3<f64>) -> Result<[f64; TRUTH_DIM]> {
        check_thrusts(thrusts)?;
        let d = self.field(&s.to_array(), thrusts, disturbance);
        Ok(std::array::from_fn(|i| d[i]))
    }

    /// One RK4 step with thrusts and disturbance held, then quaternion renormalization.
    pub fn step(&self, s: &TruthState, thrusts: &[f64; 4], disturbance: &Vector3<f64>, dt: f64) -> Result<TruthState> {
        check_thrusts(thrusts)?;
        let next = rk4_step(|x: &[f64], _: &[f64]| self.field(x, thrusts, disturbance), &s.to_array(), &[], dt);
        Ok(TruthState::from_slice(&next))
    }
}

/// Free-function form of [`TruthModel::derivative`].
pub fn truth_derivative(
    s: &TruthState,
    thrusts: &[f64; 4],
    params: &QuadParams,
    disturbance: &Vector3<f64>,
    aero: bool,
) -> Result<[f64; TRUTH_DIM]> {
    TruthModel::new(params.clone(), aero).derivative(s, thrusts, disturbance)
}

fn check_thrusts(thrusts: &[f64; 4]) -> Result<()> {
    if thrusts.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(SimError::Argument(format!("rotor thrusts must be finite and non-negative, got {thrusts:?}")));
    }
    Ok(())
}
