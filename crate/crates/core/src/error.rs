use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, sizes, rates or other caller-supplied settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input file. `location` is a byte offset (IDX) or line number (CSV).
    #[error("ingestion error in {}: {location}: {message}", path.display())]
    Ingestion {
        path: PathBuf,
        location: String,
        message: String,
    },

    /// A round could not complete: missing upload, stale message, shape clash.
    #[error("protocol error{}{}: {message}", round.map(|r| format!(" in round {r}")).unwrap_or_default(), client.map(|c| format!(" (client {c})")).unwrap_or_default())]
    Protocol {
        round: Option<usize>,
        client: Option<usize>,
        message: String,
    },

    /// Metric not defined for the input (single-class labels, no positives).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(round: Option<usize>, client: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Protocol {
            round,
            client,
            message: msg.into(),
        }
    }
}
