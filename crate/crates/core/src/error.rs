use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value lies outside the domain required by the noise family.
    #[error("domain violation at index {index}: value {value} ({reason})")]
    Domain {
        index: usize,
        value: f64,
        reason: &'static str,
    },

    /// A Poisson observation is not an integer multiple of the gain.
    #[error("value {value} at index {index} is not on the lattice of gain {gain}")]
    Lattice { index: usize, value: f64, gain: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The operation needs a discrete (enumerable) family or a capability the input lacks.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Gradient descent on moment residuals did not reach the stopping rule.
    #[error("moment matching did not converge after {iterations} iterations; residuals {residuals:?}")]
    NonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    /// Training produced a non-finite loss. `last_params` is the last finite parameter vector.
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize, last_params: Vec<f64> },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
