use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps onto one of the process exit codes used by the CLI,
/// see [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration and validation problems,
    /// 3 for I/O and decoding, 4 for numerical blow-ups during training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Dataset(_) | Error::Format(_) => 2,
            Error::Io { .. } | Error::Decode { .. } => 3,
            Error::NonFinite(_) => 4,
        }
    }
}
