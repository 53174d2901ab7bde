use thiserror::Error;

use crate::girsanov::{AssumptionReport, IterationRecord};

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate horizon: stopping time is zero on path {path}")]
    DegenerateHorizon { path: usize },

    #[error("time {time} on path {path} lies outside the grid horizon {horizon}")]
    OutOfRange { path: usize, time: f64, horizon: f64 },

    #[error("exponential overflow in {context}: max exponent {max_exponent}")]
    Overflow { context: &'static str, max_exponent: f64 },

    #[error("non-finite value at step {step} in {context}")]
    NonFinite { step: usize, context: &'static str },

    #[error("regression at step {step} is singular even with the constant basis")]
    SingularRegression { step: usize },

    #[error("driver fails the structural checks: {0}")]
    AssumptionViolated(Box<AssumptionReport>),

    #[error("measure-solution iteration did not converge after {} iterations", .history.len())]
    NotConverged { history: Vec<IterationRecord> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
