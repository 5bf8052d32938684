use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{NoiseSpec, PhantomSpec};
use crate::landmarks::{Side, SEGMENTS, TABLE};
use crate::pose::{Point, Pose};
use crate::volume::{Grid, Volume};

/// An acoustic shadow: everything inside the cone is zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub apex_mm: Point,
    pub axis: [f64; 3],
    pub half_angle_deg: f64,
}

/// Squared distance from `p` to the segment `a`-`b`.
fn segment_dist2(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (0..3).map(|i| (ap[i] - t * ab[i]) * (ap[i] - t * ab[i])).sum()
}

/// Noise-free rendering: each segment is a tube with a Gaussian radial
/// profile, combined by maximum, so intensity ridges run through every
/// landmark.
pub(crate) fn render_body(pose: &Pose, grid: &Grid, spec: &PhantomSpec) -> Volume {
    let mut out = Volume::zeros(*grid);
    let [nx, ny, nz] = grid.dims;
    for (s, &(pa, ch)) in SEGMENTS.iter().enumerate() {
        let seg = &spec.segments[s];
        let mut level = seg.intensity;
        if TABLE[ch].side == Side::Left {
            level += spec.left_intensity_offset;
        }
        let (a, b) = (pose.landmarks[pa], pose.landmarks[ch]);
        let reach = 3.0 * seg.radius_mm;
        let inv = -0.5 / (seg.radius_mm * seg.radius_mm);
        let range = |axis: usize, n: usize| {
            let lo = grid.to_voxel([a[0].min(b[0]) - reach, a[1].min(b[1]) - reach, a[2].min(b[2]) - reach])[axis];
            let hi = grid.to_voxel([a[0].max(b[0]) + reach, a[1].max(b[1]) + reach, a[2].max(b[2]) + reach])[axis];
            let lo = libm::ceil(lo).max(0.0) as usize;
            let hi = (libm::floor(hi).max(-1.0) + 1.0).min(n as f64) as usize;
            lo..hi.max(lo)
        };
        let (rx, ry, rz) = (range(0, nx), range(1, ny), range(2, nz));
        let data = out.data_mut();
        for z in rz {
            for y in ry.clone() {
                for x in rx.clone() {
                    let p = grid.to_mm([x as f64, y as f64, z as f64]);
                    let v = (level * libm::exp(segment_dist2(p, a, b) * inv)) as f32;
                    let slot = &mut data[(z * ny + y) * nx + x];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
    }
    out
}

/// Speckle, additive noise and an optional shadow cone, in that order.
pub(crate) fn apply_noise(volume: &mut Volume, noise: &NoiseSpec, rng: &mut impl Rng) -> Option<Shadow> {
    let grid = volume.grid;
    for v in volume.data_mut() {
        let m: f64 = rng.sample(StandardNormal);
        let a: f64 = rng.sample(StandardNormal);
        *v = ((*v as f64) * (1.0 + noise.speckle * m).max(0.0) + noise.additive * a) as f32;
    }
    if !(rng.random::<f64>() < noise.shadow_prob) {
        return None;
    }
    let extent = grid.dims.map(|d| (d - 1) as f64);
    let face = rng.random_range(0..6usize);
    let mut apex_vox: [f64; 3] = core::array::from_fn(|a| extent[a] * rng.random::<f64>());
    apex_vox[face / 2] = if face % 2 == 0 { 0.0 } else { extent[face / 2] };
    let apex_mm = grid.to_mm(apex_vox);
    let centre = grid.to_mm(extent.map(|e| e / 2.0));
    let to_centre = [centre[0] - apex_mm[0], centre[1] - apex_mm[1], centre[2] - apex_mm[2]];
    let n = libm::sqrt(to_centre.iter().map(|c| c * c).sum());
    let axis = super::sample::sample_cone(rng, to_centre.map(|c| c / n), 0.3);
    let cos_lim = libm::cos(noise.shadow_half_angle_deg.to_radians());
    let shadow = Shadow { apex_mm, axis, half_angle_deg: noise.shadow_half_angle_deg };
    let data = volume.data_mut();
    for (i, v) in data.iter_mut().enumerate() {
        let p = grid.to_mm(grid.coords(i).map(|c| c as f64));
        let d = [p[0] - apex_mm[0], p[1] - apex_mm[1], p[2] - apex_mm[2]];
        let r = libm::sqrt(d.iter().map(|c| c * c).sum());
        if r > 0.0 && (d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2]) >= cos_lim * r {
            *v = 0.0;
        }
    }
    Some(shadow)
}
