use thiserror::Error;

use crate::sim::Trajectory;

/// Errors raised by the solver, estimator and simulation layers.
///
/// A missing stabilizing Riccati solution is not an error: it is reported
/// through [`crate::riccati::AreOutcome`].
#[derive(Debug, Error)]
pub enum GameError {
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("state diverged (|x| = {norm:.3e}) at t = {t}")]
    Divergence {
        t: f64,
        norm: f64,
        partial: Box<Trajectory>,
    },

    #[error("experiment inapplicable: {0}")]
    Inapplicable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GameError>;

pub(crate) fn numerical(msg: impl Into<String>) -> GameError {
    GameError::Numerical(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> GameError {
    GameError::Contract(msg.into())
}
