use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("operands live on different age grids")]
    GridMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// One of the standing model assumptions (positivity of β, μ, S0; I0 ≢ 0) fails.
    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("kernel is not separable (max relative row deviation {max_rel_dev:e})")]
    NotSeparable { max_rel_dev: f64 },

    #[error("integration failed at t = {t}, age node {node}: {reason}")]
    Integration { t: f64, node: usize, reason: String },

    #[error("simulation did not converge before t = {t_end}")]
    NotConverged { t_end: f64, partial: Box<Trajectory> },

    #[error("fixed-point sandwich stalled after {iterations} iterations (gap {gap:e})")]
    SolverStall { iterations: usize, gap: f64 },

    #[error("no sign change bracketing the root: {0}")]
    Bracket(String),

    #[error("power iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    EigenNoConvergence { iterations: usize, last_change: f64 },

    #[error("closed form and fixed point disagree: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
