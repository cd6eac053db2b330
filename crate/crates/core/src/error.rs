use thiserror::Error;

/// Failure classes shared by every module in the crate.
///
/// `Contract` means the caller handed us structurally invalid data (wrong
/// dimension, invalid configuration) and indicates a bug at the call site.
/// `Numeric` means a value that must be finite was not. `Precondition` means
/// an operation ran before the state it needs exists (missing file, empty
/// buffer, too little data). `Parse` covers malformed on-disk artifacts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
