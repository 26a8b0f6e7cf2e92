use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, RuntimeError>;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("cannot read scenario {path}: {source}")]
    ScenarioIo { path: PathBuf, source: std::io::Error },
    #[error("scenario parse error at `{field}`: {message}")]
    ScenarioParse { field: String, message: String },
    #[error("invalid scenario field `{field}`: {message}")]
    ScenarioInvalid { field: String, message: String },
    #[error(transparent)]
    Simulation(#[from] rfmesh::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serve: {0}")]
    Serve(String),
}

impl RuntimeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RuntimeError::Io { path: path.into(), source }
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        RuntimeError::ScenarioInvalid {
            field: field.into(),
            message: message.into(),
        }
    }
}
