use std::io;

use thiserror::Error;

use crate::model::DocId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Exact enumeration was requested for an instance above the enumeration cap.
    #[error("enumeration cap exceeded: {0}")]
    EnumerationCap(String),

    /// A clicked (or clickable) document has zero logging propensity.
    #[error("support violation: query {query}, document {doc} has zero propensity")]
    SupportViolation { query: u64, doc: DocId },

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
