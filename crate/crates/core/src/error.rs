use thiserror::Error;

use crate::transform::ConvergenceTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A computation produced non-finite or singular values. The trace, when
    /// present, holds every iteration completed before the failure.
    #[error("numerical failure: {message}")]
    NumericalFailure {
        message: String,
        trace: Option<ConvergenceTrace>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure {
            message: msg.into(),
            trace: None,
        }
    }

    pub(crate) fn with_trace(self, trace: &ConvergenceTrace) -> Self {
        match self {
            Error::NumericalFailure {
                message,
                trace: None,
            } => Error::NumericalFailure {
                message,
                trace: Some(trace.clone()),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
