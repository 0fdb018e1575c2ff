use thiserror::Error;

/// Errors surfaced by model construction, data tooling, and the training harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is invalid or inconsistent with another one.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Dataset layout or content problems (missing pairs, unreadable files).
    #[error("data error: {0}")]
    Data(String),

    /// Procedural generation could not satisfy the requested constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// Training aborted (non-finite loss, empty dataset, ...).
    #[error("training error: {0}")]
    Train(String),

    /// Checkpoint container is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
