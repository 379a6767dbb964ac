//! Residual accelerations between logged and nominally predicted velocities.

use gpmpc_core::gp::Dataset;
use gpmpc_core::propagation::NominalModel;
use nalgebra::DMatrix;

use crate::error::Result;
use crate::nominal::{QuadNominal, GP_INPUTS, SELECTOR};
use crate::sim::TrajectoryLog;

/// GP training pairs: `w = (ξ̇, φ, θ, ψ, u)` and
/// `z = (ξ̇(k+1) − ξ̇̂(k+1)) / T_d` with `ξ̇̂` from the nominal step.
pub fn residual_dataset(log: &TrajectoryLog, model: &QuadNominal) -> Result<Dataset> {
    let n = log.ticks.len();
    let mut w = DMatrix::zeros(n, GP_INPUTS.len());
    let mut z = DMatrix::zeros(n, SELECTOR.len());
    for (i, rec) in log.ticks.iter().enumerate() {
        let xu: Vec<f64> = rec.outer.iter().chain(rec.input.iter()).copied().collect();
        for (c, &idx) in GP_INPUTS.iter().enumerate() {
            w[(i, c)] = xu[idx];
        }
        let pred = model.eval(&rec.outer, &rec.input);
        for (c, &row) in SELECTOR.iter().enumerate() {
            z[(i, c)] = (rec.next_outer[row] - pred[row]) / model.t_s;
        }
    }
    Ok(Dataset::new(w, z)?)
}

/// Velocity predicted by the augmented recursion `f_d(x, u) + T_d B_z z`.
pub fn augmented_velocity(model: &QuadNominal, x: &[f64], u: &[f64], z: &[f64]) -> [f64; 3] {
    let pred = model.eval(x, u);
    std::array::from_fn(|c| pred[SELECTOR[c]] + model.t_s * z[c])
}
