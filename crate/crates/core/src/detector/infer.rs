use super::{prepare_input, Detector, DetectorError, PreparedInput};
use crate::heatmap::{decode, DecodedPose, HeatmapStack};
use crate::volume::Volume;

/// Heatmaps for a prepared input, on its working grid.
pub fn infer_prepared(det: &mut Detector, input: &PreparedInput) -> Result<HeatmapStack, DetectorError> {
    if input.grid.dims != det.dims() {
        *det = det.with_dims(input.grid.dims)?;
    }
    det.infer_tensor(&input.tensor, input.grid)
}

/// Prepares `volume` with the detector's configuration and runs it.
pub fn infer(det: &mut Detector, volume: &Volume) -> Result<HeatmapStack, DetectorError> {
    let input = prepare_input(volume, &det.cfg)?;
    infer_prepared(det, &input)
}

/// Inference followed by decoding with the configured window and floor.
/// The pose refers to the source volume's spacing.
pub fn detect(det: &mut Detector, volume: &Volume) -> Result<DecodedPose, DetectorError> {
    let stack = infer(det, volume)?;
    let mut d = decode(&stack, det.cfg.decode_window, det.cfg.confidence_floor)?;
    d.pose.spacing_mm = volume.spacing_mm();
    Ok(d)
}
