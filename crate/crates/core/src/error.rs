use thiserror::Error;

use crate::dynamics::FlowTrace;
use crate::oracle::OracleResult;

pub type Result<T, E = LcaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LcaError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A state coordinate became NaN or infinite. `partial` holds the trace
    /// recorded up to the last finite state when the failure came from a
    /// full flow run.
    #[error("non-finite state after step {step} at t={t} (coordinate {index})")]
    Numerics {
        step: usize,
        t: f64,
        index: usize,
        partial: Option<Box<FlowTrace>>,
    },

    #[error("oracle did not converge in {iterations} iterations (residual {residual:e})")]
    NonConverged {
        iterations: usize,
        residual: f64,
        best: Box<OracleResult>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LcaError {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        LcaError::Dimension {
            what,
            expected,
            got,
        }
    }
}

impl From<csv::Error> for LcaError {
    fn from(err: csv::Error) -> Self {
        LcaError::Format(err.to_string())
    }
}

impl From<serde_json::Error> for LcaError {
    fn from(err: serde_json::Error) -> Self {
        LcaError::Format(err.to_string())
    }
}
