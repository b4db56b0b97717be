use thiserror::Error;

use crate::dynamics::DynamicState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for `{operand}`: expected {expected}, found {found}")]
    DimensionMismatch {
        operand: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("extrapolation denominator k + alpha - theta vanishes at k = {k}")]
    ZeroDenominator { k: usize },

    #[error(
        "1 + delta*(k+1-theta) = {value} is not positive at k = {k}; start at a larger index or use a smaller theta"
    )]
    NonPositiveScale { k: usize, value: f64 },

    #[error("scaling sequence violates the decay condition at k = {k}: beta_(k+1) = {next} > bound {bound}")]
    ScheduleViolation { k: usize, next: f64, bound: f64 },

    #[error("inner solver produced a non-finite objective at inner iteration {iteration}")]
    InnerNonFinite { iteration: usize },

    #[error("linear system for the subproblem is singular")]
    SingularSystem,

    #[error("outer iteration {outer}: {source}")]
    Outer {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("metric condition violated: lambda_min(M) = {lambda_min} < beta*L = {required}")]
    MetricTooSmall { lambda_min: f64, required: f64 },

    #[error("objective is not differentiable: {0}")]
    Nonsmooth(&'static str),

    #[error("trajectory blew up at t = {}", .last_valid.t)]
    BlowUp { last_valid: Box<DynamicState> },

    #[error("too few usable points for a slope fit: {usable} (need at least 10)")]
    TooFewPoints { usable: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_outer(self, outer: usize) -> Self {
        match self {
            e @ Error::Outer { .. } => e,
            e => Error::Outer {
                outer,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
