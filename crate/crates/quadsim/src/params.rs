//! Physical constants of the vehicle and its inner loop.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Default Crazyflie parameter file, embedded at build time.
pub const CRAZYFLIE_TOML: &str = include_str!("../data/crazyflie.toml");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the accumulated integral of the rate error (rad).
    pub i_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidParams {
    pub rate_hz: f64,
    /// Cutoff of the first-order filter on the derivative term; 0 disables it.
    #[serde(default)]
    pub d_filter_hz: f64,
    pub roll: AxisGains,
    pub pitch: AxisGains,
    pub yaw: AxisGains,
}

impl PidParams {
    pub fn axes(&self) -> [AxisGains; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// Unit of the rotor speed multiplying `K_aero` in the drag term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotorSpeedUnit {
    #[default]
    RadPerSec,
    Rpm,
}

impl RotorSpeedUnit {
    /// Factor converting rad/s into this unit.
    pub fn from_rad_per_sec(self) -> f64 {
        match self {
            RotorSpeedUnit::RadPerSec => 1.0,
            RotorSpeedUnit::Rpm => 60.0 / (2.0 * std::f64::consts::PI),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadParams {
    pub mass: f64,
    pub arm_length: f64,
    pub inertia: [[f64; 3]; 3],
    /// α_c in T = α_c Ω².
    pub thrust_coeff: f64,
    /// β_c, the rotor drag-torque coefficient.
    pub drag_coeff: f64,
    pub gravity: f64,
    pub k_aero: [[f64; 3]; 3],
    #[serde(default)]
    pub aero_speed_unit: RotorSpeedUnit,
    /// Collective thrust bounds (N); each rotor saturates at `thrust_max / 4`.
    pub thrust_min: f64,
    pub thrust_max: f64,
    /// Symmetric body-rate bounds (rad/s).
    pub rate_max: [f64; 3],
    pub pid: PidParams,
}

impl QuadParams {
    pub fn crazyflie() -> Self {
        Self::from_toml_str(CRAZYFLIE_TOML).expect("embedded parameter file is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: QuadParams = toml::from_str(s).map_err(|e| SimError::Params(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("arm_length", self.arm_length),
            ("thrust_coeff", self.thrust_coeff),
            ("drag_coeff", self.drag_coeff),
            ("gravity", self.gravity),
            ("thrust_max", self.thrust_max),
            ("pid.rate_hz", self.pid.rate_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Params(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.thrust_min >= 0.0 && self.thrust_min < self.thrust_max) {
            return Err(SimError::Params("thrust bounds must satisfy 0 ≤ min < max".into()));
        }
        if self.rate_max.iter().any(|&r| !(r > 0.0)) {
            return Err(SimError::Params("rate bounds must be positive".into()));
        }
        let j = self.inertia_matrix();
        if (j - j.transpose()).amax() > 1e-15 * j.amax() {
            return Err(SimError::Params("inertia must be symmetric".into()));
        }
        if j.cholesky().is_none() {
            return Err(SimError::Params("inertia must be positive definite".into()));
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia[r][c])
    }

    pub fn k_aero_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.k_aero[r][c])
    }

    /// Projected lever d = ℓ/√2 of the "X" layout.
    pub fn lever(&self) -> f64 {
        self.arm_length / std::f64::consts::SQRT_2
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn rotor_thrust_max(&self) -> f64 {
        self.thrust_max / 4.0
    }

    /// Maps rotor thrusts (T₁..T₄) to (T, τ_x, τ_y, τ_z).
    pub fn allocation_matrix(&self) -> Matrix4<f64> {
        let d = self.lever();
        let k = self.drag_coeff / self.thrust_coeff;
        Matrix4::new(
            1.0, 1.0, 1.0, 1.0, //
            -d, -d, d, d, //
            -d, d, d, -d, //
            -k, k, -k, k,
        )
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }
}
