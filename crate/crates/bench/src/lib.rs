//! Data collection, residual-model training and closed-loop benchmarking
//! for the quadrotor LPV-MPC variants.

pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod provenance;
pub mod variant;

pub use config::RunConfig;
pub use error::{BenchError, Result};
pub use variant::Variant;
