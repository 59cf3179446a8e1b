use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed corpus (line {line}): {reason}")]
    MalformedCorpus { line: usize, reason: String },

    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("vocabulary mismatch: model has V={model}, data has V={data}")]
    VocabMismatch { model: usize, data: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("internal consistency violation: {0}")]
    Internal(String),

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches the file a parse error came from.
    pub(crate) fn at_path(self, path: &std::path::Path) -> Self {
        match self {
            Error::Io { .. } | Error::InFile { .. } => self,
            other => Error::InFile {
                path: path.to_path_buf(),
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, looking through file context.
    pub fn kind(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.kind(),
            other => other,
        }
    }
}
