use thiserror::Error;

use crate::adapt::AdaptTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("infeasible instance: {0}")]
    InfeasibleInstance(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid tour: {0}")]
    InvalidTour(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version: {0}")]
    Version(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss for sample {sample}: {msg}")]
    Numeric { sample: String, msg: String },

    #[error("training diverged at epoch {epoch} (loss {loss:.4} vs initial {initial:.4})")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("no feasible solution decoded in {} iterations", .trace.records.len())]
    NoFeasibleSolution { trace: Box<AdaptTrace> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}
