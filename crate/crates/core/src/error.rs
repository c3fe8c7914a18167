use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument outside the shape system (bad axis, factor, range).
    #[error("invalid argument: {0}")]
    Arg(String),

    /// Configuration rejected (unknown key, unparsable value, bad combination).
    #[error("config error: {0}")]
    Config(String),

    /// Input data rejected (NaN pointmap, wrong image extents, empty mask).
    #[error("input error: {0}")]
    Input(String),

    /// Numeric failure at runtime (NaN in stream outputs, degenerate solve).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed on-disk artifact (checkpoint, dataset buffer, manifest).
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Arg(msg.into())
    }
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
    pub fn corrupt(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Corrupt { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
