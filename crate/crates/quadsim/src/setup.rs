//! Outer-loop controller settings for the quadrotor.

use gpmpc_core::controller::{ControllerConfig, Weight};
use gpmpc_core::qp::mpc::HalfSpace;

use crate::nominal::{INPUT_DIM, STATE_DIM};
use crate::params::QuadParams;

pub const VELOCITY_LIMIT: f64 = 6.5;
pub const ANGLE_LIMIT_DEG: f64 = 70.0;

fn box_rows(dim: usize, index: usize, lo: f64, hi: f64) -> [HalfSpace; 2] {
    let mut up = vec![0.0; dim];
    up[index] = 1.0;
    let mut down = vec![0.0; dim];
    down[index] = -1.0;
    [HalfSpace::new(up, hi), HalfSpace::new(down, -lo)]
}

/// Tracking weights, velocity/attitude boxes, thrust and rate limits, and
/// the convergence-gap scaling (inputs by their admissible ranges).
pub fn quad_controller_config(params: &QuadParams) -> ControllerConfig {
    let mut cfg = ControllerConfig::with_weights(
        Weight::Diagonal(vec![100.0, 100.0, 400.0, 40.0, 10.0, 10.0, 0.1, 0.1, 0.1]),
        Weight::Diagonal(vec![0.1; INPUT_DIM]),
    );
    let angle = ANGLE_LIMIT_DEG.to_radians();
    cfg.state_polytope = (3..6)
        .flat_map(|i| box_rows(STATE_DIM, i, -VELOCITY_LIMIT, VELOCITY_LIMIT))
        .chain((6..9).flat_map(|i| box_rows(STATE_DIM, i, -angle, angle)))
        .collect();
    cfg.input_polytope = box_rows(INPUT_DIM, 0, params.thrust_min, params.thrust_max)
        .into_iter()
        .chain((0..3).flat_map(|a| box_rows(INPUT_DIM, a + 1, -params.rate_max[a], params.rate_max[a])))
        .collect();
    cfg.gap_state_scale = vec![1.0; STATE_DIM];
    cfg.gap_input_scale = std::iter::once(params.thrust_max - params.thrust_min)
        .chain(params.rate_max.iter().map(|r| 2.0 * r))
        .collect();
    cfg.normalize().expect("quadrotor defaults are valid");
    cfg
}
