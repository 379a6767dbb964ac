use thiserror::Error;

use crate::sim::TrajectoryLog;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parameter file: {0}")]
    Params(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The closed loop diverged; the log holds everything up to the failure.
    #[error("simulation aborted at tick {tick}: {reason}")]
    Crash { tick: usize, reason: String, log: Box<TrajectoryLog> },

    #[error(transparent)]
    Core(#[from] gpmpc_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
