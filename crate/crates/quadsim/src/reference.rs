//! Position references for tracking and data collection.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub trait Reference: Send + Sync {
    fn position(&self, t: f64) -> Vector3<f64>;
    fn velocity(&self, t: f64) -> Vector3<f64>;

    /// Central difference of [`Reference::velocity`].
    fn acceleration(&self, t: f64) -> Vector3<f64> {
        const H: f64 = 1e-4;
        (self.velocity(t + H) - self.velocity(t - H)) / (2.0 * H)
    }

    /// Outer-state reference `(ξ, ξ̇, φ, θ, 0)` with roll and pitch those
    /// that align the thrust axis with the required specific force.
    fn state(&self, t: f64) -> [f64; 9] {
        let (p, v) = (self.position(t), self.velocity(t));
        let (phi, theta) = tilt_for(&self.acceleration(t), GRAVITY);
        [p.x, p.y, p.z, v.x, v.y, v.z, phi, theta, 0.0]
    }
}

const GRAVITY: f64 = 9.81;

/// Roll and pitch (zero yaw) whose body z-axis points along `a + g ε₃`.
pub fn tilt_for(acc: &Vector3<f64>, gravity: f64) -> (f64, f64) {
    let f = acc + Vector3::new(0.0, 0.0, gravity);
    let theta = f.x.atan2(f.z);
    let phi = (-f.y).atan2((f.x * f.x + f.z * f.z).sqrt());
    (phi, theta)
}

/// Figure-eight
/// `(a cos(ω₁s), a sin(ω₁s) cos(ω₂s), h + a_z sin(ω₁s))` with `s = time_scale·t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lemniscate {
    pub amplitude: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub height: f64,
    pub z_amplitude: f64,
    pub time_scale: f64,
}

impl Default for Lemniscate {
    fn default() -> Self {
        Lemniscate {
            amplitude: 1.2,
            omega1: 1.3 * std::f64::consts::SQRT_2,
            omega2: 0.77 * std::f64::consts::SQRT_2,
            height: 1.2,
            z_amplitude: 0.02,
            time_scale: 1.0,
        }
    }
}

impl Reference for Lemniscate {
    fn position(&self, t: f64) -> Vector3<f64> {
        let s = self.time_scale * t;
        let (a, w1, w2) = (self.amplitude, self.omega1, self.omega2);
        Vector3::new(
            a * (w1 * s).cos(),
            a * (w1 * s).sin() * (w2 * s).cos(),
            self.height + self.z_amplitude * (w1 * s).sin(),
        )
    }

    fn velocity(&self, t: f64) -> Vector3<f64> {
        let s = self.time_scale * t;
        let (a, w1, w2) = (self.amplitude, self.omega1, self.omega2);
        let ds = self.time_scale;
        Vector3::new(
            -a * w1 * (w1 * s).sin(),
            a * (w1 * (w1 * s).cos() * (w2 * s).cos() - w2 * (w1 * s).sin() * (w2 * s).sin()),
            self.z_amplitude * w1 * (w1 * s).cos(),
        ) * ds
    }
}

/// Fixed set-point.
#[derive(Clone, Debug, PartialEq)]
pub struct Hover(pub Vector3<f64>);

impl Reference for Hover {
    fn position(&self, _t: f64) -> Vector3<f64> {
        self.0
    }

    fn velocity(&self, _t: f64) -> Vector3<f64> {
        Vector3::zeros()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSplineConfig {
    /// Box center (m).
    pub center: [f64; 3],
    /// Box edge length (m).
    pub box_size: f64,
    /// Lowest admissible altitude (m).
    pub min_height: f64,
    /// Duration of each spline segment (s).
    pub segment_time: f64,
}

impl Default for RandomSplineConfig {
    fn default() -> Self {
        RandomSplineConfig { center: [0.0, 0.0, 1.5], box_size: 2.5, min_height: 0.3, segment_time: 1.0 }
    }
}

/// Piecewise quintic through random waypoints. Knot velocities follow the
/// Catmull-Rom rule and knot accelerations are zero, so the curve is C²
/// with minimum-jerk segments. Starts and ends at rest; constant afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomSpline {
    segment_time: f64,
    points: Vec<Vector3<f64>>,
    velocities: Vec<Vector3<f64>>,
}

impl RandomSpline {
    /// Enough segments to cover `duration`, first waypoint at `start`.
    pub fn generate(cfg: &RandomSplineConfig, start: Vector3<f64>, duration: f64, seed: u64) -> Result<Self> {
        if !(cfg.segment_time > 0.0 && cfg.box_size > 0.0 && duration >= 0.0) {
            return Err(SimError::Argument("spline segment time, box size and duration must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_seg = (duration / cfg.segment_time).ceil().max(1.0) as usize;
        let half = 0.5 * cfg.box_size;
        let mut points = vec![start];
        for _ in 0..n_seg {
            let mut p = Vector3::zeros();
            for a in 0..3 {
                p[a] = cfg.center[a] + rng.random_range(-half..half);
            }
            p.z = p.z.max(cfg.min_height);
            points.push(p);
        }
        let n = points.len();
        let velocities = (0..n)
            .map(|i| {
                if i == 0 || i + 1 == n {
                    Vector3::zeros()
                } else {
                    (points[i + 1] - points[i - 1]) / (2.0 * cfg.segment_time)
                }
            })
            .collect();
        Ok(RandomSpline { segment_time: cfg.segment_time, points, velocities })
    }

    pub fn waypoints(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.points.len() - 2;
        let t = t.max(0.0);
        let seg = ((t / self.segment_time).floor() as usize).min(last);
        let s = ((t - seg as f64 * self.segment_time) / self.segment_time).min(1.0);
        (seg, s)
    }

    /// Value and derivative (w.r.t. normalized time) of the quintic Hermite segment.
    fn eval(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (i, s) = self.locate(t);
        let h = self.segment_time;
        let (p0, p1) = (self.points[i], self.points[i + 1]);
        let (v0, v1) = (self.velocities[i] * h, self.velocities[i + 1] * h);
        let (s2, s3, s4, s5) = (s * s, s * s * s, s.powi(4), s.powi(5));
        let h00 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
        let h10 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
        let h01 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
        let h11 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
        let d00 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
        let d10 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
        let d01 = -d00;
        let d11 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
        let pos = p0 * h00 + v0 * h10 + p1 * h01 + v1 * h11;
        let dpos = p0 * d00 + v0 * d10 + p1 * d01 + v1 * d11;
        (pos, dpos / h)
    }
}

impl Reference for RandomSpline {
    fn position(&self, t: f64) -> Vector3<f64> {
        self.eval(t).0
    }

    fn velocity(&self, t: f64) -> Vector3<f64> {
        if t >= self.segment_time * (self.points.len() - 1) as f64 {
            return Vector3::zeros();
        }
        self.eval(t).1
    }
}
