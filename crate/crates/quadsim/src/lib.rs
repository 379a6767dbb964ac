//! Quadrotor simulation for outer-loop MPC: quaternion rigid-body truth
//! model with aero drag, "X" rotor mixer, body-rate PID, the reduced
//! Euler-angle predictor and the residual data pipeline.

pub mod error;
pub mod nominal;
pub mod params;
pub mod pid;
pub mod reference;
pub mod residual;
pub mod setup;
pub mod sim;
pub mod truth;

pub use error::{Result, SimError};
pub use nominal::QuadNominal;
pub use params::QuadParams;
pub use sim::{simulate_closed_loop, SimOptions, TrajectoryLog};
pub use truth::{allocate, truth_derivative, TruthModel, TruthState};
