//! Inner body-rate PID.

use nalgebra::Vector3;

use crate::params::{AxisGains, PidParams};

#[derive(Clone, Debug)]
pub struct RatePid {
    gains: [AxisGains; 3],
    dt: f64,
    /// Smoothing factor of the derivative filter (1 = unfiltered).
    d_alpha: f64,
    integral: Vector3<f64>,
    prev_error: Option<Vector3<f64>>,
    d_filtered: Vector3<f64>,
}

impl RatePid {
    pub fn new(params: &PidParams) -> Self {
        let dt = 1.0 / params.rate_hz;
        let d_alpha = if params.d_filter_hz > 0.0 {
            let rc = 1.0 / (2.0 * std::f64::consts::PI * params.d_filter_hz);
            dt / (rc + dt)
        } else {
            1.0
        };
        RatePid {
            gains: params.axes(),
            dt,
            d_alpha,
            integral: Vector3::zeros(),
            prev_error: None,
            d_filtered: Vector3::zeros(),
        }
    }

    pub fn period(&self) -> f64 {
        self.dt
    }

    pub fn reset(&mut self) {
        self.integral = Vector3::zeros();
        self.prev_error = None;
        self.d_filtered = Vector3::zeros();
    }

    /// One controller tick; returns body torques. The integral is clamped
    /// per axis (anti-windup) and the derivative acts on the rate error.
    pub fn update(&mut self, rate_ref: &Vector3<f64>, rate_meas: &Vector3<f64>) -> Vector3<f64> {
        let err = rate_ref - rate_meas;
        let d_raw = match self.prev_error {
            Some(prev) => (err - prev) / self.dt,
            None => Vector3::zeros(),
        };
        self.prev_error = Some(err);
        self.d_filtered += (d_raw - self.d_filtered) * self.d_alpha;
        let mut tau = Vector3::zeros();
        for (a, g) in self.gains.iter().enumerate() {
            self.integral[a] = (self.integral[a] + err[a] * self.dt).clamp(-g.i_limit, g.i_limit);
            tau[a] = g.kp * err[a] + g.ki * self.integral[a] + g.kd * self.d_filtered[a];
        }
        tau
    }
}

/// Function form of [`RatePid::update`].
pub fn inner_rate_pid(rate_ref: &Vector3<f64>, rate_meas: &Vector3<f64>, pid: &mut RatePid) -> Vector3<f64> {
    pid.update(rate_ref, rate_meas)
}
