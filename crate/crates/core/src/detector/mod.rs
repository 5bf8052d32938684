//! 3D encoder-decoder landmark detector and its training loop.

use alloc::string::String;

mod adam;
mod build;
mod infer;
mod prepare;
mod train;

pub use adam::{Adam, AdamConfig};
pub use build::{build_detector, Detector, DetectorConfig, DetectorNodes, INPUT_NAME, TARGET_NAME};
pub use infer::{detect, infer, infer_prepared};
pub use prepare::{prepare_case, prepare_input, PreparedCase, PreparedInput};
pub use train::{loss_and_gradients, train, train_prepared, EpochSummary, LossRecord, TrainConfig, TrainReport};

use crate::autodiff::GraphError;
use crate::heatmap::HeatmapError;
use crate::volume::VolumeError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectorError {
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("input extents {dims:?} are not multiples of {multiple}; pad by {padding:?}")]
    Indivisible { dims: [usize; 3], multiple: usize, padding: [usize; 3] },
    #[error("training case {case}: landmark {landmark} lies outside the volume")]
    LandmarkOutOfBounds { case: usize, landmark: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
}
