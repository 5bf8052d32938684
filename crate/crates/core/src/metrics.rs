//! Landmark distances, PCK curves, AUC and segment lengths.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::landmarks::{NUM_LANDMARKS, NUM_SEGMENTS, SEGMENTS};
use crate::pose::{distance, Pose};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("poses refer to different voxel spacings ({pred} vs {truth} mm)")]
    SpacingMismatch { pred: f64, truth: f64 },
    #[error("threshold grid must be non-empty and strictly increasing")]
    BadGrid,
    #[error("AUC needs at least two thresholds")]
    SinglePointGrid,
    #[error("no distances to evaluate")]
    Empty,
    #[error("{preds} predictions for {truths} ground-truth poses")]
    CountMismatch { preds: usize, truths: usize },
}

/// Per-landmark distance in mm; `None` where either pose lacks the landmark.
pub fn euclidean(pred: &Pose, truth: &Pose) -> Result<[Option<f64>; NUM_LANDMARKS], MetricsError> {
    if (pred.spacing_mm - truth.spacing_mm).abs() > 1e-9 * truth.spacing_mm.abs().max(1.0) {
        return Err(MetricsError::SpacingMismatch { pred: pred.spacing_mm, truth: truth.spacing_mm });
    }
    Ok(core::array::from_fn(|j| {
        (pred.present[j] && truth.present[j]).then(|| distance(pred.landmarks[j], truth.landmarks[j]))
    }))
}

/// `0, step, 2·step, …, max` inclusive.
pub fn threshold_grid(max_mm: f64, step_mm: f64) -> Vec<f64> {
    let n = libm::round(max_mm / step_mm) as usize;
    (0..=n).map(|i| i as f64 * step_mm).collect()
}

/// The default grid: 0 to 30 mm in 0.5 mm steps.
pub fn default_thresholds() -> Vec<f64> {
    threshold_grid(30.0, 0.5)
}

fn check_grid(thresholds: &[f64]) -> Result<(), MetricsError> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MetricsError::BadGrid);
    }
    Ok(())
}

/// Fraction of `distances` strictly below each threshold. Exact hits count
/// at every threshold, including zero.
pub fn pck_curve(distances: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, MetricsError> {
    check_grid(thresholds)?;
    if distances.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds.iter().map(|&t| sorted.partition_point(|&d| d < t || d == 0.0) as f64 / n).collect())
}

/// Trapezoidal area under a PCK curve over its grid span, in percent.
pub fn auc(thresholds: &[f64], pck: &[f64]) -> Result<f64, MetricsError> {
    check_grid(thresholds)?;
    if thresholds.len() < 2 {
        return Err(MetricsError::SinglePointGrid);
    }
    if pck.len() != thresholds.len() {
        return Err(MetricsError::BadGrid);
    }
    let area: f64 = thresholds.windows(2).zip(pck.windows(2)).map(|(t, p)| (t[1] - t[0]) * (p[0] + p[1]) / 2.0).sum();
    Ok(100.0 * area / (thresholds[thresholds.len() - 1] - thresholds[0]))
}

/// Length of every segment in mm; `None` where an endpoint is absent.
pub fn segment_lengths(pose: &Pose) -> [Option<f64>; NUM_SEGMENTS] {
    SEGMENTS.map(|(a, b)| (pose.present[a] && pose.present[b]).then(|| distance(pose.landmarks[a], pose.landmarks[b])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: usize,
    pub thresholds_mm: Vec<f64>,
    /// Mean distance per landmark over the cases where it was evaluable.
    pub mean_mm: [Option<f64>; NUM_LANDMARKS],
    /// Mean over all evaluable landmark distances.
    pub overall_mean_mm: f64,
    pub auc_percent: [Option<f64>; NUM_LANDMARKS],
    pub overall_auc_percent: f64,
    /// Per landmark, PCK at every threshold.
    pub pck: [Option<Vec<f64>>; NUM_LANDMARKS],
    pub pooled_pck: Vec<f64>,
    /// Per case, the predicted segment lengths.
    pub segment_lengths_mm: Vec<[Option<f64>; NUM_SEGMENTS]>,
    /// Per case, per landmark distances.
    pub distances_mm: Vec<[Option<f64>; NUM_LANDMARKS]>,
}

impl EvalReport {
    /// Mean distance over the given landmark indices, pooled across cases.
    pub fn subset_mean_mm(&self, subset: &[usize]) -> Option<f64> {
        let v: Vec<f64> = self.distances_mm.iter().flat_map(|d| subset.iter().filter_map(|&j| d[j])).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate(preds: &[Pose], truths: &[Pose], thresholds: &[f64]) -> Result<EvalReport, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::CountMismatch { preds: preds.len(), truths: truths.len() });
    }
    check_grid(thresholds)?;
    if thresholds.len() < 2 {
        return Err(MetricsError::SinglePointGrid);
    }
    let distances_mm =
        preds.iter().zip(truths).map(|(p, t)| euclidean(p, t)).collect::<Result<Vec<_>, _>>()?;
    let per: [Vec<f64>; NUM_LANDMARKS] = core::array::from_fn(|j| distances_mm.iter().filter_map(|d| d[j]).collect());
    let pooled: Vec<f64> = per.iter().flatten().copied().collect();
    if pooled.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut pck: [Option<Vec<f64>>; NUM_LANDMARKS] = Default::default();
    let mut auc_percent = [None; NUM_LANDMARKS];
    for j in 0..NUM_LANDMARKS {
        if !per[j].is_empty() {
            let c = pck_curve(&per[j], thresholds)?;
            auc_percent[j] = Some(auc(thresholds, &c)?);
            pck[j] = Some(c);
        }
    }
    let pooled_pck = pck_curve(&pooled, thresholds)?;
    Ok(EvalReport {
        cases: preds.len(),
        thresholds_mm: thresholds.to_vec(),
        mean_mm: core::array::from_fn(|j| (!per[j].is_empty()).then(|| mean(&per[j]))),
        overall_mean_mm: mean(&pooled),
        auc_percent,
        overall_auc_percent: auc(thresholds, &pooled_pck)?,
        pck,
        pooled_pck,
        segment_lengths_mm: preds.iter().map(segment_lengths).collect(),
        distances_mm,
    })
}
