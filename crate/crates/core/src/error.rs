//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (TREC files, JSONL corpus, model output).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Structurally valid input that violates a documented invariant,
    /// or a missing required field.
    #[error("schema error: {0}")]
    Schema(String),

    /// Duplicate key where uniqueness is required.
    #[error("conflict: {0}")]
    Conflict(String),

    /// Caller passed an out-of-contract argument.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A referenced record (topic, passage, run) is absent.
    #[error("missing data: {0}")]
    Missing(String),

    /// Chat-completion backend failure (transport, HTTP status, bad payload).
    #[error("backend error: {0}")]
    Backend(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Pipeline failure wrapped with the stage that produced it.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with a pipeline stage name; keeps the innermost stage
    /// when errors bubble through nested stages.
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The stage name, if this is a stage-wrapped error.
    pub fn stage_name(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
