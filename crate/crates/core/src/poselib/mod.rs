//! Pose library, rigid registration, support-set retrieval and label
//! proxies.

use alloc::string::String;

mod library;
mod rigid;

pub use library::{build_label_proxy, retrieve_support, Atlas, PoseLibrary, SupportEntry, SupportSet, MIN_REGISTRATION_POINTS};
pub use rigid::{fit, fit_rigid, FitMode, RigidFit, RigidTransform, COLLINEAR_RATIO};

use crate::heatmap::HeatmapError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseLibError {
    #[error("need at least 3 point pairs, got {0}")]
    TooFewPoints(usize),
    #[error("point set sizes differ: {src} source vs {dst} target")]
    LengthMismatch { src: usize, dst: usize },
    #[error("source points are collinear (singular value ratio {ratio:e})")]
    Degenerate { ratio: f64 },
    #[error("only {valid} registration landmarks are usable; refinement declined")]
    Declined { valid: usize },
    #[error("support size {k} is outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("atlas '{id}' lacks registration landmark {landmark}")]
    MissingLandmark { id: String, landmark: usize },
    #[error("atlas '{0}' has non-finite coordinates")]
    NonFinite(String),
    #[error("duplicate atlas id '{0}'")]
    DuplicateId(String),
    #[error("support set is empty")]
    EmptySupport,
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
}
