use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Dimensions of params, data or model shape do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("corrupt message: {0}")]
    CorruptMessage(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for errors a user can fix by editing the config.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Dataset(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
