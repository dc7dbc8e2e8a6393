use thiserror::Error;

use crate::markov::State;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("row {state} is not conservative: row sum {sum:e}")]
    NotConservative { state: State, sum: f64 },

    #[error("negative off-diagonal rate {rate:e} from {from} to {to}")]
    NegativeRate { from: State, to: State, rate: f64 },

    #[error("row {state} is not a probability vector: {reason}")]
    NotStochastic { state: State, reason: String },

    #[error("state {0} is outside the state space")]
    StateOutsideSpace(State),

    #[error("state spaces do not match")]
    SpaceMismatch,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no clean projection: {0}")]
    NotProjection(String),

    #[error("limit existence not supported: {0}")]
    LimitNotSupported(String),

    #[error("{steps} steps exceed the budget of {budget}; coarsen h or shorten the horizon")]
    StepBudget { steps: u64, budget: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
