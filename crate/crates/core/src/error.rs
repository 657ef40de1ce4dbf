use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Each variant maps onto one CLI exit code (see [`Error::exit_code`]) and
/// one FFI status code, so callers in other languages can branch on it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at stage {stage}, iteration {iteration}: {detail}")]
    Diverged {
        stage: usize,
        iteration: usize,
        detail: String,
    },

    #[error("noise scheme mismatch: model uses `{model}`, key uses `{key}`")]
    SchemeMismatch { model: String, key: String },

    #[error("model file checksum mismatch (corrupted or truncated)")]
    Checksum,

    #[error("not a model file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::DimensionMismatch(_) => 2,
            Error::NonFinite(_) | Error::Diverged { .. } => 3,
            Error::Io { .. } | Error::Image(_) => 4,
            Error::SchemeMismatch { .. } => 5,
            Error::Checksum | Error::BadMagic | Error::UnsupportedVersion(_) | Error::Malformed(_) => 6,
        }
    }
}
