use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or size constraint violated (odd Bayer dimensions, mismatched
    /// tensor shapes, image smaller than a filter window, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric or enum parameter is out of its documented range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Configuration file or CLI override rejected before any side effect.
    #[error("validation error: {0}")]
    Validation(String),

    /// A binary container (.braw, checkpoint, PPM) is malformed.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Underlying I/O failure, annotated with the file it touched.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training diverged or produced a non-finite gradient.
    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Process exit code for the CLI: 2 for anything caught during
    /// validation, 3 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Parameter(_) | Error::Validation(_) => 2,
            Error::Format { .. } | Error::Io { .. } | Error::Training(_) => 3,
        }
    }

    /// Short machine-parseable code printed alongside the human message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "E_DIMENSION",
            Error::Parameter(_) => "E_PARAMETER",
            Error::Validation(_) => "E_VALIDATION",
            Error::Format { .. } => "E_FORMAT",
            Error::Io { .. } => "E_IO",
            Error::Training(_) => "E_TRAINING",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
