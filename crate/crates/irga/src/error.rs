//! Crate-wide error type.

/// Errors produced by the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// Dimensions of inputs do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A design matrix is rank deficient.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// A configuration value is invalid or infeasible.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical routine failed (indefinite matrix, divergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The message-passing stage diverged even at the damping floor.
    #[error("vamp diverged after {iterations} iterations (last residuals: {trace:?})")]
    VampDiverged {
        iterations: usize,
        /// Relative step sizes of the last few iterations before the blow-up.
        trace: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
