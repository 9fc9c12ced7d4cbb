use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration; `origin` is the file, flag or variable it came from.
    #[error("configuration error in {origin}: {message}")]
    Config { origin: String, message: String },

    #[error(transparent)]
    Core(#[from] hetfed::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Run logs that summarize expected but could not find.
    #[error("missing run logs: {}", .0.join(", "))]
    MissingLogs(Vec<String>),

    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub(crate) fn config(origin: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            origin: origin.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// 2 for configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Core(hetfed::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
