use super::{DetectorConfig, DetectorError};
use crate::heatmap::encode_clipped;
use crate::pose::Pose;
use crate::tensor::Tensor;
use crate::volume::{Grid, Volume};

/// A volume brought to working resolution: normalized, rescaled and padded
/// to the network's divisibility. `grid` maps working voxels back to the
/// millimetre frame of the source volume.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub tensor: Tensor<f32>,
    pub grid: Grid,
    pub pad_before: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCase {
    pub input: PreparedInput,
    pub target: Tensor<f32>,
}

pub fn prepare_input(volume: &Volume, cfg: &DetectorConfig) -> Result<PreparedInput, DetectorError> {
    cfg.validate()?;
    let v = if cfg.normalize_intensity { volume.normalized() } else { volume.clone() };
    let v = v.resampled(cfg.input_scale)?;
    let (v, pad_before) = v.padded_to_multiple(cfg.divisor());
    Ok(PreparedInput { tensor: v.to_tensor(), grid: v.grid, pad_before })
}

/// Prepares a training case; `case` only labels errors.
pub fn prepare_case(volume: &Volume, pose: &Pose, cfg: &DetectorConfig, case: usize) -> Result<PreparedCase, DetectorError> {
    for (landmark, &p) in pose.landmarks.iter().enumerate() {
        if !pose.present[landmark] || !volume.grid.contains_mm(p) {
            return Err(DetectorError::LandmarkOutOfBounds { case, landmark });
        }
    }
    let input = prepare_input(volume, cfg)?;
    let target = encode_clipped(pose, &input.grid, cfg.sigma_vox)?.into_tensor();
    Ok(PreparedCase { input, target })
}
