//! Test-time refinement: the detector is fine-tuned on each case against a
//! proxy label built from the library poses that best match its own
//! prediction.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::GraphError;
use crate::detector::{
    infer_prepared, loss_and_gradients, prepare_input, Adam, AdamConfig, Detector, DetectorError, PreparedInput,
    INPUT_NAME, TARGET_NAME,
};
use crate::heatmap::{decode, DecodedPose, HeatmapError};
use crate::poselib::{build_label_proxy, retrieve_support, FitMode, PoseLibError, PoseLibrary};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SslError {
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    PoseLib(#[from] PoseLibError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Support set size.
    pub k: usize,
    pub fit_mode: FitMode,
    /// Keep the decoded pose of every iteration in the trace.
    pub snapshot_each_iter: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { iterations: 6, lr: 5e-4, k: 10, fit_mode: FitMode::Rigid, snapshot_each_iter: false }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SslError::InvalidConfig("lr must be positive".into()));
        }
        if self.k == 0 {
            return Err(SslError::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// L2 loss against this iteration's proxy before the update.
    pub loss_before: f64,
    /// Same proxy, after the update.
    pub loss_after: f64,
    pub mean_support_error_mm: f64,
    pub support_ids: Vec<String>,
    /// Decode after the update; kept when snapshots are requested.
    pub pose: Option<DecodedPose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RefineStatus {
    Completed,
    /// Too few usable registration landmarks; the unrefined pose is returned.
    Declined { valid: usize },
    /// The refine loss went non-finite; the unrefined pose is returned.
    Aborted { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub status: RefineStatus,
    pub initial: DecodedPose,
    pub refined: DecodedPose,
    pub trace: Vec<IterationRecord>,
}

fn decode_with(det: &mut Detector, input: &PreparedInput, spacing_mm: f64) -> Result<DecodedPose, SslError> {
    let stack = infer_prepared(det, input)?;
    let mut d = decode(&stack, det.cfg.decode_window, det.cfg.confidence_floor)?;
    d.pose.spacing_mm = spacing_mm;
    Ok(d)
}

/// Refines one case on a private copy of `base`, which is left untouched.
pub fn refine(base: &Detector, volume: &Volume, library: &PoseLibrary, cfg: &RefineConfig) -> Result<RefineOutcome, SslError> {
    cfg.validate()?;
    let mut det = base.clone();
    let input = prepare_input(volume, &det.cfg)?;
    let initial = decode_with(&mut det, &input, volume.spacing_mm())?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut current = initial.clone();
    for iteration in 0..cfg.iterations {
        let support = match retrieve_support(&current, library, cfg.k, cfg.fit_mode) {
            Ok(s) => s,
            Err(PoseLibError::Declined { valid }) => {
                return Ok(RefineOutcome { status: RefineStatus::Declined { valid }, refined: initial.clone(), initial, trace });
            }
            Err(e) => return Err(e.into()),
        };
        let proxy = build_label_proxy(&support, &input.grid, det.cfg.sigma_vox)?.into_tensor();
        let aborted = || RefineOutcome {
            status: RefineStatus::Aborted { iteration },
            refined: initial.clone(),
            initial: initial.clone(),
            trace: trace.clone(),
        };
        let (loss_before, grads) = match loss_and_gradients(&mut det, &input.tensor, &proxy, false) {
            Ok(r) => r,
            Err(DetectorError::Graph(GraphError::NonFinite { .. })) => return Ok(aborted()),
            Err(e) => return Err(e.into()),
        };
        opt.step(&mut det.graph, &grads);
        let loss_after = match det.graph.forward(&[(INPUT_NAME, &input.tensor), (TARGET_NAME, &proxy)], true) {
            Ok(l) => l as f64,
            Err(GraphError::NonFinite { .. }) => return Ok(aborted()),
            Err(e) => return Err(DetectorError::from(e).into()),
        };
        current = decode_with(&mut det, &input, volume.spacing_mm())?;
        trace.push(IterationRecord {
            iteration,
            loss_before,
            loss_after,
            mean_support_error_mm: support.mean_error_mm(),
            support_ids: support.ids(),
            pose: cfg.snapshot_each_iter.then(|| current.clone()),
        });
    }
    Ok(RefineOutcome { status: RefineStatus::Completed, initial, refined: current, trace })
}

/// Refines every volume independently; a failing case does not stop the
/// others.
pub fn refine_batch(
    base: &Detector,
    volumes: &[Volume],
    library: &PoseLibrary,
    cfg: &RefineConfig,
) -> Vec<Result<RefineOutcome, SslError>> {
    volumes.iter().map(|v| refine(base, v, library, cfg)).collect()
}
