use std::path::PathBuf;

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("extraction error: {0}")]
    Extraction(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable kind tag, used in the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Extraction(_) => "extraction",
            Error::Eval(_) => "eval",
            Error::Param(_) => "param",
            Error::Training(_) => "training",
        }
    }

    /// Process exit code for the CLI. 0 is success, 1 is reserved for panics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) => 3,
            Error::Format(_) => 4,
            Error::Shape(_) => 5,
            Error::Domain(_) => 6,
            Error::Extraction(_) => 7,
            Error::Eval(_) => 8,
            Error::Param(_) => 9,
            Error::Training(_) => 10,
            Error::Io { .. } => 11,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
