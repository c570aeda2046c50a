use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("duplicate vehicle ({house_id}, {vehicle_id}) in {path}")]
    DuplicateVehicle {
        path: PathBuf,
        house_id: String,
        vehicle_id: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("chain {key}: {reason}")]
    Chain { key: String, reason: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("model file {path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the error stems from bad user input (configuration, schema,
    /// missing files) rather than from a failure while running a stage.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::MissingColumn { .. }
            | Error::DuplicateVehicle { .. }
            | Error::Config(_)
            | Error::InvalidInput(_) => true,
            Error::Csv { .. }
            | Error::Chain { .. }
            | Error::Diverged(_)
            | Error::ModelFormat { .. } => false,
        }
    }
}
