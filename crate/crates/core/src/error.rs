use thiserror::Error;

/// Errors produced anywhere in the learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{message}, line {line}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("structure would contain a cycle")]
    Cyclic,

    #[error("illegal move: {0}")]
    IllegalMove(String),

    #[error("variable mismatch: {0}")]
    VariableMismatch(String),

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("not a separator: {0}")]
    NotASeparator(String),

    #[error("no feasible structure: {0}")]
    Infeasible(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
