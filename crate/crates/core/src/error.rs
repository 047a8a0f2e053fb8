use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Every variant maps onto one of the CLI exit classes (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("label error: label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("tape error: {0}")]
    Tape(String),

    #[error(
        "degenerate batch: batch norm in train mode needs at least 2 values per channel, got {0}"
    )]
    DegenerateBatch(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("eval error: {0}")]
    Eval(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::Format(_) | Error::Split(_) | Error::Io { .. } | Error::Label { .. } => 4,
            Error::Numeric(_) => 5,
            Error::Shape(_) | Error::Tape(_) | Error::DegenerateBatch(_) | Error::Eval(_) => 5,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
