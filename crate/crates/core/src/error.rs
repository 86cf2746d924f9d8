//! Error type shared across the crate.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Dimension or shape mismatch; the message names the offending tensor
    /// or parameter path.
    Shape(String),
    /// Non-finite values where finite ones are required.
    NonFinite(String),
    /// A named parameter was looked up but does not exist.
    UnknownParam(String),
    /// A parameter was registered twice under the same name.
    DuplicateParam(String),
    /// Token index outside the vocabulary.
    UnknownToken { token: usize, vocab_size: usize },
    /// A precondition on an argument failed.
    Invalid(String),
    /// Config file problems; every invalid key is listed.
    Config(Vec<String>),
    /// Checkpoint file is missing or malformed.
    Checkpoint { path: PathBuf, message: String },
    Io { path: PathBuf, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite {msg}"),
            Error::UnknownParam(name) => write!(f, "unknown parameter: {name}"),
            Error::DuplicateParam(name) => write!(f, "duplicate parameter: {name}"),
            Error::UnknownToken { token, vocab_size } => {
                write!(f, "token index {token} out of range (vocabulary size {vocab_size})")
            }
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Config(keys) => write!(f, "invalid config: {}", keys.join("; ")),
            Error::Checkpoint { path, message } => {
                write!(f, "checkpoint {}: {message}", path.display())
            }
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Checkpoint { path: path.into(), message: message.into() }
    }
}
