use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("no valid histograms in {}{}", dir.display(), format_file_errors(errors))]
    EmptyCampaign { dir: PathBuf, errors: Vec<FileError> },

    #[error("cannot estimate the total decay rate: no uncoupled emitters")]
    NoUncoupled,

    #[error(transparent)]
    Core(#[from] pcw_core::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A file that was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FileError {
    pub path: PathBuf,
    pub message: String,
}

fn format_file_errors(errors: &[FileError]) -> String {
    errors
        .iter()
        .map(|e| format!("\n  {}: {}", e.path.display(), e.message))
        .collect()
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
