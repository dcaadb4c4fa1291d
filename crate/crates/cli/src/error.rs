use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the harness: configuration, file formats and the
/// numerical failures propagated from the library.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },

    #[error("missing required key `{key}` in section [{section}]")]
    MissingKey { section: String, key: String },

    #[error("invalid value `{value}` for [{section}] {key}: {reason}")]
    BadValue {
        section: String,
        key: String,
        value: String,
        reason: String,
    },

    #[error("{path}: bad magic number")]
    BadMagic { path: PathBuf },

    #[error("{path}: file is truncated")]
    TruncatedFile { path: PathBuf },

    #[error("{path}: footer does not match the file contents")]
    CorruptFooter { path: PathBuf },

    #[error("{0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Numerical(#[from] jiio_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}
