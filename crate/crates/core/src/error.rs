use thiserror::Error;

/// Errors raised by tape evaluation, linearization and the integrators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("node {node} ({op}): argument {value} is outside the domain")]
    Domain {
        node: usize,
        op: &'static str,
        value: f64,
    },

    #[error("node {node} ({op}): derivative is not finite at {value}")]
    NotDifferentiable {
        node: usize,
        op: &'static str,
        value: f64,
    },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid tape: {0}")]
    InvalidTape(String),

    #[error("segment has more than {limit} breakpoints")]
    TooManyKinks { limit: usize },

    #[error("fixed-point iteration failed after {iterations} iterations (residual {residual:e})")]
    FixedPointDivergence { iterations: usize, residual: f64 },

    #[error("step size {h:e} fell below the minimum {h_min:e} at t = {t}")]
    StepSizeUnderflow { t: f64, h: f64, h_min: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing data: {0}")]
    MissingData(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub(crate) fn check_finite(values: &[f64], context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}
