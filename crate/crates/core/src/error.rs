use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cholesky factorization failed for {context} (last jitter tried: {jitter:e})")]
    Cholesky { context: String, jitter: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "tightened bounds infeasible at prediction step {step}, half-space {halfspace}: \
         lower {lower} > upper {upper}"
    )]
    InfeasibleBounds { step: usize, halfspace: usize, lower: f64, upper: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("model document: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}
