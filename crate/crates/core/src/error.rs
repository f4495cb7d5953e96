use thiserror::Error;

/// Errors raised by the integrator, the gradient engine and the drivers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    StepBudgetExceeded { max_steps: usize, t: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite adjoint encountered at t = {t}")]
    NonFiniteAdjoint { t: f64 },

    #[error("time {t} outside trajectory span [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network shape: {0}")]
    InvalidShape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("objective failed at iteration {iter}: {source}")]
    Objective { iter: usize, source: Box<Error> },

    #[error("all {0} multistart runs failed")]
    AllStartsFailed(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
