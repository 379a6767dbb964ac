//! Sparse-GP-augmented LPV model predictive control.
//!
//! Layers, bottom-up: [`gp`] and [`sparse_gp`] for regression,
//! [`propagation`] for Gaussian belief propagation through the augmented
//! dynamics, [`ftc`] for the path-integrated LPV embedding, [`qp`] for the
//! ADMM solver and MPC assembly, and [`controller`] for the iterated scheme.

pub mod chance;
pub mod controller;
pub mod dense;
pub mod error;
pub mod ftc;
pub mod gp;
pub mod optim;
pub mod propagation;
pub mod qp;
pub mod scalar;
pub mod sparse_gp;

pub use error::{Error, Result};
