use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DdkError>;

#[derive(Debug, Error)]
pub enum DdkError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NumericDomain(String),

    /// A recorded computation produced a non-finite value.
    #[error("non-finite value at tape node {node} ({op})")]
    NonFiniteNode { node: usize, op: &'static str },

    #[error("non-finite loss term {0}")]
    NonFiniteLoss(&'static str),

    #[error("step {index} failed: {source}")]
    RolloutStep {
        index: usize,
        #[source]
        source: Box<DdkError>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("operation not supported in {0} mode")]
    UnsupportedMode(&'static str),

    #[error("training diverged at epoch {epoch}: validation loss {val_loss} exceeds {limit}")]
    Diverged { epoch: usize, val_loss: f64, limit: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl DdkError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DdkError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        DdkError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code for the command-line front end: 2 for data
    /// problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            DdkError::NumericDomain(_)
            | DdkError::NonFiniteNode { .. }
            | DdkError::NonFiniteLoss(_)
            | DdkError::Diverged { .. } => 3,
            DdkError::RolloutStep { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
