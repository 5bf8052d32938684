//! Gaussian landmark heatmaps: encoding poses and decoding network output.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::landmarks::NUM_LANDMARKS;
use crate::pose::{Point, Pose};
use crate::tensor::Tensor;
use crate::volume::Grid;

/// Encoded values below this are stored as zero.
pub const TRUNCATION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HeatmapError {
    #[error("landmark {landmark} at {position_mm:?} mm lies outside the grid")]
    OutOfBounds { landmark: usize, position_mm: Point },
    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("decode window must be odd and at least 1, got {0}")]
    Window(usize),
    #[error("expected a heatmap tensor of shape {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },
}

/// One response map per landmark on a shared grid; values are laid out as
/// a `[16, z, y, x]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    grid: Grid,
    values: Tensor<f32>,
}

impl HeatmapStack {
    pub fn zeros(grid: Grid) -> Self {
        let [nx, ny, nz] = grid.dims;
        Self { grid, values: Tensor::zeros(&[NUM_LANDMARKS, nz, ny, nx]) }
    }

    pub fn from_tensor(grid: Grid, values: Tensor<f32>) -> Result<Self, HeatmapError> {
        let [nx, ny, nz] = grid.dims;
        let expected = vec![NUM_LANDMARKS, nz, ny, nx];
        if values.shape() != expected.as_slice() {
            return Err(HeatmapError::Shape { expected, actual: values.shape().to_vec() });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.values
    }

    pub fn channel(&self, j: usize) -> &[f32] {
        let n = self.grid.len();
        &self.values.data()[j * n..(j + 1) * n]
    }

    pub fn channel_mut(&mut self, j: usize) -> &mut [f32] {
        let n = self.grid.len();
        &mut self.values.data_mut()[j * n..(j + 1) * n]
    }
}

/// Encodes a complete pose. Channels of absent landmarks stay zero; present
/// landmarks must lie on the grid.
pub fn encode(pose: &Pose, grid: &Grid, sigma_vox: f64) -> Result<HeatmapStack, HeatmapError> {
    for (j, &p) in pose.landmarks.iter().enumerate() {
        if pose.present[j] && !grid.contains_mm(p) {
            return Err(HeatmapError::OutOfBounds { landmark: j, position_mm: p });
        }
    }
    encode_clipped(pose, grid, sigma_vox)
}

/// Like [`encode`] but tolerates landmarks off the grid: such a channel
/// holds whatever part of its Gaussian reaches the grid, unnormalized.
pub fn encode_clipped(pose: &Pose, grid: &Grid, sigma_vox: f64) -> Result<HeatmapStack, HeatmapError> {
    if !(sigma_vox.is_finite() && sigma_vox > 0.0) {
        return Err(HeatmapError::Sigma(sigma_vox));
    }
    let mut stack = HeatmapStack::zeros(*grid);
    for j in 0..NUM_LANDMARKS {
        if pose.present[j] {
            splat(stack.channel_mut(j), grid, pose.landmarks[j], sigma_vox);
        }
    }
    Ok(stack)
}

/// Writes `exp(-d²/2σ²)` around `p`, scaled so the nearest voxel reads 1.
fn splat(out: &mut [f32], grid: &Grid, p: Point, sigma: f64) {
    let c = grid.to_voxel(p);
    let d0 = match grid.nearest_voxel(p) {
        Some(n) => (0..3).map(|a| (n[a] as f64 - c[a]) * (n[a] as f64 - c[a])).sum::<f64>(),
        None => 0.0,
    };
    let two_s2 = 2.0 * sigma * sigma;
    let reach2 = d0 + two_s2 * libm::log(1.0 / TRUNCATION);
    let reach = libm::sqrt(reach2);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = libm::ceil(c[a] - reach);
        let h = libm::floor(c[a] + reach);
        if h < 0.0 || l > (grid.dims[a] - 1) as f64 {
            return;
        }
        lo[a] = l.max(0.0) as usize;
        hi[a] = (h as usize).min(grid.dims[a] - 1);
    }
    for z in lo[2]..=hi[2] {
        let dz = z as f64 - c[2];
        for y in lo[1]..=hi[1] {
            let dy = y as f64 - c[1];
            let row = grid.index(0, y, z);
            for x in lo[0]..=hi[0] {
                let dx = x as f64 - c[0];
                let v = libm::exp(-(dx * dx + dy * dy + dz * dz - d0) / two_s2);
                out[row + x] = if v < TRUNCATION { 0.0 } else { v as f32 };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedPose {
    /// `present` mirrors `valid`.
    pub pose: Pose,
    pub confidence: [f64; NUM_LANDMARKS],
    pub valid: [bool; NUM_LANDMARKS],
}

impl DecodedPose {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Peak voxel per channel (lowest linear index on ties), refined by the
/// centroid of responses above half the peak in the surrounding `window³`
/// block. Along an axis where that block would cross the border, a
/// three-voxel log-parabola fit replaces the centroid.
/// A channel is valid when its peak is positive and at least `floor`.
pub fn decode(stack: &HeatmapStack, window: usize, floor: f64) -> Result<DecodedPose, HeatmapError> {
    if window % 2 == 0 {
        return Err(HeatmapError::Window(window));
    }
    let grid = stack.grid;
    let half = window / 2;
    let mut landmarks = [[0.0; 3]; NUM_LANDMARKS];
    let mut confidence = [0.0; NUM_LANDMARKS];
    let mut valid = [false; NUM_LANDMARKS];
    for j in 0..NUM_LANDMARKS {
        let ch = stack.channel(j);
        let mut best = 0;
        for (i, &v) in ch.iter().enumerate() {
            if v > ch[best] {
                best = i;
            }
        }
        let peak = ch[best];
        let at = grid.coords(best);
        let mut acc = [0.0f64; 3];
        let mut wsum = 0.0f64;
        let base = peak as f64 * 0.5;
        let range = |a: usize| {
            let h = half.min(at[a]).min(grid.dims[a] - 1 - at[a]);
            at[a] - h..=at[a] + h
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let w = (ch[grid.index(x, y, z)] as f64 - base).max(0.0);
                    acc[0] += w * x as f64;
                    acc[1] += w * y as f64;
                    acc[2] += w * z as f64;
                    wsum += w;
                }
            }
        }
        let mut voxel = if wsum > 0.0 { acc.map(|s| s / wsum) } else { at.map(|v| v as f64) };
        for a in 0..3 {
            if let Some(t) = border_offset(ch, &grid, at, a, half) {
                voxel[a] = t;
            }
        }
        landmarks[j] = grid.to_mm(voxel);
        confidence[j] = peak as f64;
        valid[j] = peak > 0.0 && peak as f64 >= floor;
    }
    Ok(DecodedPose { pose: Pose { landmarks, present: valid, spacing_mm: grid.spacing_mm }, confidence, valid })
}

/// On an axis where the window is clipped by the border, the position
/// comes from the vertex of a parabola through the log responses of three
/// neighbouring voxels around the peak (shifted inward on the border voxel),
/// which is exact for a Gaussian.
fn border_offset(ch: &[f32], grid: &Grid, at: [usize; 3], a: usize, half: usize) -> Option<f64> {
    let n = grid.dims[a];
    if n < 3 || half == 0 || half <= at[a].min(n - 1 - at[a]) {
        return None;
    }
    let first = at[a].clamp(1, n - 2) - 1;
    let sample = |i: usize| {
        let mut c = at;
        c[a] = first + i;
        ch[grid.index(c[0], c[1], c[2])] as f64
    };
    let v = [sample(0), sample(1), sample(2)];
    if v.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let l = v.map(libm::log);
    let curv = l[0] - 2.0 * l[1] + l[2];
    if !(curv < 0.0) {
        return None;
    }
    let vertex = first as f64 + 1.0 + (l[0] - l[2]) / (2.0 * curv);
    Some(vertex.clamp(at[a] as f64 - 0.5, at[a] as f64 + 0.5).clamp(0.0, (n - 1) as f64))
}
