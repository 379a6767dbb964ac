//! Reduced outer-loop model: position, velocity and ZYX Euler angles driven
//! by collective thrust and body rates.

use gpmpc_core::propagation::{AugmentedModel, NominalModel, PropagationMode};
use gpmpc_core::scalar::Real;
use gpmpc_core::sparse_gp::SparseGpModel;
use std::sync::Arc;

use crate::error::{Result, SimError};
use crate::params::QuadParams;

pub const STATE_DIM: usize = 9;
pub const INPUT_DIM: usize = 4;
/// Indices of `w = (ξ̇, φ, θ, ψ, u)` inside `(x, u)`.
pub const GP_INPUTS: [usize; 10] = [3, 4, 5, 6, 7, 8, 9, 10, 11, 12];
/// State rows corrected by the residual model (the velocities).
pub const SELECTOR: [usize; 3] = [3, 4, 5];
/// Closest approach to pitch ±π/2 accepted by [`nominal_continuous`].
pub const PITCH_MARGIN: f64 = 1e-3;

/// Classical RK4 with the input held over the step.
pub fn rk4_step<S: Real, F>(field: F, x: &[S], u: &[S], h: f64) -> Vec<S>
where
    F: Fn(&[S], &[S]) -> Vec<S>,
{
    let axpy = |a: &[S], k: &[S], s: f64| -> Vec<S> { a.iter().zip(k).map(|(&a, &k)| a + k.scale(s)).collect() };
    let k1 = field(x, u);
    let k2 = field(&axpy(x, &k1, 0.5 * h), u);
    let k3 = field(&axpy(x, &k2, 0.5 * h), u);
    let k4 = field(&axpy(x, &k3, h), u);
    (0..x.len())
        .map(|i| x[i] + (k1[i] + k2[i].scale(2.0) + k3[i].scale(2.0) + k4[i]).scale(h / 6.0))
        .collect()
}

/// Alias of [`rk4_step`] under its discretization name.
pub fn rk4_discretize<S: Real, F>(field: F, x: &[S], u: &[S], t_s: f64) -> Vec<S>
where
    F: Fn(&[S], &[S]) -> Vec<S>,
{
    rk4_step(field, x, u, t_s)
}

/// Continuous-time outer-loop dynamics `ẋ = f_c(x, u)`.
pub fn field<S: Real>(mass: f64, gravity: f64, x: &[S], u: &[S]) -> Vec<S> {
    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let (thrust, p, q, r) = (u[0], u[1], u[2], u[3]);
    let (sphi, cphi) = (phi.sin(), phi.cos());
    let (sth, cth) = (theta.sin(), theta.cos());
    let (spsi, cpsi) = (psi.sin(), psi.cos());
    let a = thrust.scale(1.0 / mass);
    let inner = sphi * q + cphi * r;
    vec![
        x[3],
        x[4],
        x[5],
        a * (cphi * sth * cpsi + sphi * spsi),
        a * (cphi * sth * spsi - sphi * cpsi),
        a * cphi * cth - S::cst(gravity),
        p + theta.tan() * inner,
        cphi * q - sphi * r,
        inner / cth,
    ]
}

/// Checked evaluation of [`field`].
pub fn nominal_continuous(x: &[f64], u: &[f64], params: &QuadParams) -> Result<Vec<f64>> {
    if x.len() != STATE_DIM || u.len() != INPUT_DIM {
        return Err(SimError::Argument(format!("expected 9 states and 4 inputs, got {} and {}", x.len(), u.len())));
    }
    if !(x[7].abs() < std::f64::consts::FRAC_PI_2 - PITCH_MARGIN) {
        return Err(SimError::Numerical(format!("pitch {} too close to the Euler singularity", x[7])));
    }
    Ok(field(params.mass, params.gravity, x, u))
}

/// RK4 zero-order-hold discretization of the outer-loop model.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadNominal {
    pub mass: f64,
    pub gravity: f64,
    pub t_s: f64,
}

impl QuadNominal {
    pub fn new(params: &QuadParams, t_s: f64) -> Self {
        QuadNominal { mass: params.mass, gravity: params.gravity, t_s }
    }

    pub fn hover_input(&self) -> [f64; INPUT_DIM] {
        [self.mass * self.gravity, 0.0, 0.0, 0.0]
    }

    /// Nominal model augmented with a residual GP on the velocity rows.
    pub fn augmented(self, gp: Option<Arc<SparseGpModel>>, mode: PropagationMode) -> Result<AugmentedModel<QuadNominal>> {
        let t_s = self.t_s;
        let mut m = match gp {
            Some(gp) => AugmentedModel::with_gp(self, gp, GP_INPUTS.to_vec(), SELECTOR.to_vec(), t_s, mode)?,
            None => AugmentedModel::nominal_only(self),
        };
        m.mode = mode;
        Ok(m)
    }
}

impl NominalModel for QuadNominal {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn eval<S: Real>(&self, x: &[S], u: &[S]) -> Vec<S> {
        rk4_step(|x: &[S], u: &[S]| field(self.mass, self.gravity, x, u), x, u, self.t_s)
    }
}
