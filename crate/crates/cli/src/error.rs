use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use ptmaml_autodiff::AutodiffError;
use ptmaml_core::data::DataError;
use ptmaml_core::learner::LearnerError;
use ptmaml_core::meta::MetaError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing prerequisite {}: run `{command}` first", path.display())]
    Dependency { path: PathBuf, command: &'static str },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Checkpoint(#[from] AutodiffError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("dataset fingerprint mismatch: {left} is {left_fp}, {right} is {right_fp}")]
    Fingerprint {
        left: String,
        left_fp: String,
        right: String,
        right_fp: String,
    },
    #[error("nothing to report: no finished runs under {}", .0.display())]
    NoRuns(PathBuf),
}

/// Machine-readable error line written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub command: &'a str,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing: Option<String>,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Dependency { .. } => "dependency",
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Learner(_) => "learner",
            CliError::Meta(_) => "training",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::Fingerprint { .. } => "fingerprint",
            CliError::NoRuns(_) => "no_runs",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Dependency { .. } => 3,
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn record<'a>(&self, command: &'a str) -> ErrorRecord<'a> {
        ErrorRecord {
            command,
            kind: self.kind(),
            message: self.to_string(),
            missing: match self {
                CliError::Dependency { path, .. } => Some(path.display().to_string()),
                _ => None,
            },
        }
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Json { path, source }
}
