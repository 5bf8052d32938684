use std::path::PathBuf;

use volmark_core::detector::DetectorError;
use volmark_core::heatmap::HeatmapError;
use volmark_core::metrics::MetricsError;
use volmark_core::phantom::PhantomError;
use volmark_core::poselib::PoseLibError;
use volmark_core::ssl::SslError;
use volmark_core::volume::VolumeError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or missing inputs; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0} already exists; pass --overwrite to replace it")]
    Collision(PathBuf),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    PoseLib(#[from] PoseLibError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Collision(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Json { path, source }
    }
}
