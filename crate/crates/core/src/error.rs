use std::fmt;

use crate::model::Time;

/// A job that was still unfinished at its absolute deadline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadlineMiss {
    pub task: String,
    pub index: u64,
    pub deadline: Time,
}

impl fmt::Display for DeadlineMiss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "job {}#{} missed its deadline at t={}",
            self.task, self.index, self.deadline
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid task set at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("hyperperiod of {what} exceeds the limit of {limit} time units")]
    HyperperiodLimit { what: String, limit: i64 },

    #[error("infeasible: {0}")]
    Infeasible(DeadlineMiss),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("{0}")]
    NotFound(String),

    #[error("cause-effect chain {0} has no job chain inside its repetition window")]
    NoPrimaryChain(String),

    #[error("task-set generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
