use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum PinsError {
    /// An operation received input that violates its precondition.
    #[error("{op}: {reason}")]
    RejectedInput { op: &'static str, reason: String },

    /// Two tensors that must conform do not.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Inconsistent internal state (missing gradients, mismatched score maps).
    #[error("state error: {0}")]
    State(String),

    #[error("ingestion error at row {row}: {reason}")]
    Ingestion { row: usize, reason: String },

    #[error("iteration error: {0}")]
    Iteration(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("problem too large: {0}")]
    Size(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl PinsError {
    pub(crate) fn rejected(op: &'static str, reason: impl Into<String>) -> Self {
        PinsError::RejectedInput {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        PinsError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PinsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input or configuration, as opposed
    /// to failures during a run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            PinsError::Config(_)
                | PinsError::Ingestion { .. }
                | PinsError::Format { .. }
                | PinsError::Io { .. }
                | PinsError::Serde(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PinsError>;
