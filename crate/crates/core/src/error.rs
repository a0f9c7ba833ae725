use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that cannot be combined by the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was called outside its preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed feature or checkpoint file.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Checkpoint does not fit the data or model it is applied to.
    #[error("load error: {0}")]
    Load(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A runtime invariant did not hold.
    #[error("check failed: {0}")]
    Check(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for failed checks and numerical breakdown, 2 for
    /// bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Check(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
