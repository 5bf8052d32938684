//! Scalar volumes on isotropic voxel grids.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VolumeError {
    #[error("volume of extents {dims:?} cannot hold {len} values")]
    Shape { dims: [usize; 3], len: usize },
    #[error("voxel spacing must be positive and finite, got {0}")]
    Spacing(f64),
    #[error("scaling extents {dims:?} by {scale} leaves an empty axis")]
    EmptyResample { dims: [usize; 3], scale: f64 },
}

/// Placement of a voxel lattice in millimetres. Voxel `i` along an axis is
/// centred at `origin_mm + i * spacing_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Extents along x, y, z.
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub origin_mm: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing_mm: f64) -> Result<Self, VolumeError> {
        if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
            return Err(VolumeError::Spacing(spacing_mm));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::Shape { dims, len: 0 });
        }
        Ok(Self { dims, spacing_mm, origin_mm: [0.0; 3] })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Continuous voxel coordinates to millimetres.
    pub fn to_mm(&self, v: [f64; 3]) -> [f64; 3] {
        core::array::from_fn(|a| self.origin_mm[a] + v[a] * self.spacing_mm)
    }

    /// Millimetres to continuous voxel coordinates.
    pub fn to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        core::array::from_fn(|a| (p[a] - self.origin_mm[a]) / self.spacing_mm)
    }

    /// Nearest voxel of a millimetre position, if it lies on the grid.
    pub fn nearest_voxel(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let v = self.to_voxel(p);
        let mut out = [0; 3];
        for a in 0..3 {
            let r = libm::floor(v[a] + 0.5);
            if !(r >= 0.0 && r < self.dims[a] as f64) {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    pub fn contains_mm(&self, p: [f64; 3]) -> bool {
        self.nearest_voxel(p).is_some()
    }

    /// Grid covering the same field of view with extents scaled by `scale`.
    ///
    /// Sample centres follow the half-voxel convention: output voxel `j`
    /// sits at input coordinate `(j + 0.5) / scale - 0.5`.
    pub fn scaled(&self, scale: f64) -> Result<Grid, VolumeError> {
        let dims = self.dims.map(|d| libm::floor(d as f64 * scale + 1e-9) as usize);
        if !(scale > 0.0) || dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::EmptyResample { dims: self.dims, scale });
        }
        let shift = (0.5 / scale - 0.5) * self.spacing_mm;
        Ok(Grid { dims, spacing_mm: self.spacing_mm / scale, origin_mm: self.origin_mm.map(|o| o + shift) })
    }

    /// Grid grown by `before` / `after` voxels per axis.
    pub fn padded(&self, before: [usize; 3], after: [usize; 3]) -> Grid {
        Grid {
            dims: core::array::from_fn(|a| self.dims[a] + before[a] + after[a]),
            spacing_mm: self.spacing_mm,
            origin_mm: core::array::from_fn(|a| self.origin_mm[a] - before[a] as f64 * self.spacing_mm),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: Grid,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self, VolumeError> {
        if data.len() != grid.len() || grid.is_empty() {
            return Err(VolumeError::Shape { dims: grid.dims, len: data.len() });
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { data: vec![0.0; grid.len()], grid }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing_mm(&self) -> f64 {
        self.grid.spacing_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Zero mean, unit variance. A constant volume only gets centred.
    pub fn normalized(&self) -> Volume {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
        let inv = if var > 0.0 { 1.0 / libm::sqrt(var) } else { 1.0 };
        let data = self.data.iter().map(|&v| ((v as f64 - mean) * inv) as f32).collect();
        Volume { grid: self.grid, data }
    }

    /// Trilinear resampling onto [`Grid::scaled`]. At `scale = 0.5` each
    /// output voxel is the mean of a 2×2×2 block.
    pub fn resampled(&self, scale: f64) -> Result<Volume, VolumeError> {
        if scale == 1.0 {
            return Ok(self.clone());
        }
        let grid = self.grid.scaled(scale)?;
        let taps: [Vec<(usize, usize, f64)>; 3] = core::array::from_fn(|a| {
            (0..grid.dims[a]).map(|j| linear_tap(j, scale, self.grid.dims[a])).collect()
        });
        let mut data = Vec::with_capacity(grid.len());
        for &(z0, z1, wz) in &taps[2] {
            for &(y0, y1, wy) in &taps[1] {
                for &(x0, x1, wx) in &taps[0] {
                    let lerp_x = |y, z| {
                        let a = self.get(x0, y, z) as f64;
                        let b = self.get(x1, y, z) as f64;
                        a + (b - a) * wx
                    };
                    let lerp_y = |z| {
                        let a = lerp_x(y0, z);
                        a + (lerp_x(y1, z) - a) * wy
                    };
                    let a = lerp_y(z0);
                    data.push((a + (lerp_y(z1) - a) * wz) as f32);
                }
            }
        }
        Ok(Volume { grid, data })
    }

    /// Zero padding by explicit per-axis amounts.
    pub fn padded(&self, before: [usize; 3], after: [usize; 3]) -> Volume {
        if before == [0; 3] && after == [0; 3] {
            return self.clone();
        }
        let grid = self.grid.padded(before, after);
        let mut data = vec![0.0; grid.len()];
        let [nx, ny, nz] = self.grid.dims;
        for z in 0..nz {
            for y in 0..ny {
                let src = self.grid.index(0, y, z);
                let dst = grid.index(before[0], y + before[1], z + before[2]);
                data[dst..dst + nx].copy_from_slice(&self.data[src..src + nx]);
            }
        }
        Volume { grid, data }
    }

    /// Symmetric zero padding up to a multiple of `m` per axis; the odd
    /// voxel goes after. Returns the padding applied before each axis.
    pub fn padded_to_multiple(&self, m: usize) -> (Volume, [usize; 3]) {
        let total = self.grid.dims.map(|d| (m - d % m) % m);
        let before = total.map(|t| t / 2);
        let after: [usize; 3] = core::array::from_fn(|a| total[a] - before[a]);
        (self.padded(before, after), before)
    }

    /// `[1, z, y, x]` tensor view of the values.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let [nx, ny, nz] = self.grid.dims;
        Tensor::from_vec(&[1, nz, ny, nx], self.data.clone()).expect("grid extents are non-zero")
    }
}

/// Source taps for output index `j` along an axis of input length `n`.
fn linear_tap(j: usize, scale: f64, n: usize) -> (usize, usize, f64) {
    let s = ((j as f64 + 0.5) / scale - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = libm::floor(s) as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f64)
}
