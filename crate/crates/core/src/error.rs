use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are inconsistent with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A computation produced non-finite values or was numerically invalid.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Required state (e.g. a forward cache) is missing or inconsistent.
    #[error("state error: {0}")]
    State(String),

    /// Invalid hyperparameter or configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset problems: missing directories, empty classes, undecodable splits.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed model file.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
