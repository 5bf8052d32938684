use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::build::{INPUT_NAME, TARGET_NAME};
use super::{prepare_case, Adam, AdamConfig, Detector, DetectorError, PreparedCase};
use crate::autodiff::{select_checkpoints, CheckpointPolicy, GradientMap, GraphError, PassPeaks};
use crate::pose::Pose;
use crate::tensor::Tensor;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 1, epochs: 20, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(DetectorError::InvalidConfig("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(DetectorError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<LossRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Largest forward and backward peaks over all steps.
    pub peaks: PassPeaks,
}

/// Ingests `(volume, pose)` pairs and trains on them.
pub fn train<F: FnMut(&EpochSummary, &Detector)>(
    det: &mut Detector,
    dataset: &[(Volume, Pose)],
    cfg: &TrainConfig,
    policy: Option<&CheckpointPolicy>,
    on_epoch: F,
) -> Result<TrainReport, DetectorError> {
    let cases = dataset
        .iter()
        .enumerate()
        .map(|(i, (v, p))| prepare_case(v, p, &det.cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    train_prepared(det, &cases, cfg, policy, on_epoch)
}

/// Trains on already prepared cases. With a policy, each step runs a
/// discarding forward pass and the checkpointed backward pass.
pub fn train_prepared<F: FnMut(&EpochSummary, &Detector)>(
    det: &mut Detector,
    cases: &[PreparedCase],
    cfg: &TrainConfig,
    policy: Option<&CheckpointPolicy>,
    mut on_epoch: F,
) -> Result<TrainReport, DetectorError> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    apply_policy(det, policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam);
    let mut report = TrainReport { steps: Vec::new(), epochs: Vec::new(), peaks: PassPeaks::default() };
    let mut order: Vec<usize> = (0..cases.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Option<GradientMap<f32>> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let case = &cases[i];
                fit_dims(det, case.input.grid.dims, policy)?;
                let (loss, grads) = loss_and_gradients(det, &case.input.tensor, &case.target, policy.is_some())
                    .map_err(|e| match e {
                        DetectorError::Graph(GraphError::NonFinite { .. }) => DetectorError::NonFiniteLoss { epoch, step },
                        e => e,
                    })?;
                let peaks = det.graph.peaks();
                report.peaks = PassPeaks {
                    forward: report.peaks.forward.max(peaks.forward),
                    backward: report.peaks.backward.max(peaks.backward),
                };
                batch_loss += loss;
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (id, g) in grads {
                            a.get_mut(&id).expect("same graph").add_assign(&g);
                        }
                    }
                }
            }
            let mut grads = acc.expect("chunks are non-empty");
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f32;
                for g in grads.values_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= inv);
                }
            }
            opt.step(&mut det.graph, &grads);
            let loss = batch_loss / batch.len() as f64;
            epoch_sum += loss;
            report.steps.push(LossRecord { epoch, step, loss });
        }
        let steps = order.len().div_ceil(cfg.batch_size);
        let summary = EpochSummary { epoch, mean_loss: epoch_sum / steps as f64 };
        report.epochs.push(summary);
        on_epoch(&summary, det);
    }
    Ok(report)
}

/// One forward/backward pass against `target`. `discard` selects the
/// checkpointed path; the graph's checkpoint set must already be in place.
pub fn loss_and_gradients(
    det: &mut Detector,
    input: &Tensor<f32>,
    target: &Tensor<f32>,
    discard: bool,
) -> Result<(f64, GradientMap<f32>), DetectorError> {
    let loss = det.graph.forward(&[(INPUT_NAME, input), (TARGET_NAME, target)], discard)?;
    let grads = det.graph.backward()?;
    Ok((loss as f64, grads))
}

/// Rebuilds the graph if a case has other working extents, and applies the
/// checkpoint policy.
fn fit_dims(det: &mut Detector, dims: [usize; 3], policy: Option<&CheckpointPolicy>) -> Result<(), DetectorError> {
    if dims != det.dims() {
        *det = det.with_dims(dims)?;
        apply_policy(det, policy)?;
    }
    Ok(())
}

fn apply_policy(det: &mut Detector, policy: Option<&CheckpointPolicy>) -> Result<(), DetectorError> {
    if let Some(p) = policy {
        let set = select_checkpoints(&det.graph, p)?;
        det.graph.set_checkpoints(set)?;
    }
    Ok(())
}
