use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A text or binary artifact violated its format. `line` is 1-based, or 0
    /// when the problem is not tied to a line (binary formats, truncation).
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no region for class {0}")]
    NoRegion(usize),

    #[error("class id out of range: {id} (num_classes = {num_classes})")]
    ClassOutOfRange { id: usize, num_classes: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{}: {source}", path.display())]
    AtPath {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            msg: msg.into(),
        }
    }

    /// Attaches the offending file to an error.
    pub fn at(self, path: impl AsRef<Path>) -> Self {
        Error::AtPath {
            path: path.as_ref().to_path_buf(),
            source: Box::new(self),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
