use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad dimensions, missing constants, invalid parameters, rejected config keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared in the iterate or estimator state.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config serialize: {0}")]
    ConfigSerialize(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
