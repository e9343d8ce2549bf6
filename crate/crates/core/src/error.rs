use thiserror::Error;

use crate::sim::SimTime;

/// Errors raised while configuring or running a simulation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("causality violation: event scheduled at {requested} ns while clock is at {now} ns")]
    Causality { now: SimTime, requested: SimTime },

    #[error("config error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),
}

impl SimError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        SimError::Model(msg.into())
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
