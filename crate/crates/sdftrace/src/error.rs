use std::path::PathBuf;

/// Error type shared by the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pixel ({col}, {row}) out of range for {width}x{height} image")]
    PixelOutOfRange {
        col: u32,
        row: u32,
        width: u32,
        height: u32,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {path:?} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("scene load error at `{key}`: {message}")]
    SceneLoad { key: String, message: String },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("non-finite loss at step {step} ({breakdown})")]
    NonFiniteLoss { step: usize, breakdown: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Codec(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
