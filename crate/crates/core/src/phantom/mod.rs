//! Synthetic articulated phantoms with exact landmark ground truth.
//!
//! Bodies are built in a local frame with `z` cranial, `y` ventral and `x`
//! towards the left side. The spine bows dorsally, which together with the
//! ventrally folded limbs makes left and right distinguishable in
//! principle, though not by intensity unless `left_intensity_offset` is set.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

mod augment;
mod render;
mod sample;

pub use augment::{augment, Augmentation, Axis};
pub use render::Shadow;
pub use sample::{sample_case, sample_pose, PhantomCase, Provenance, MAX_ATTEMPTS};

use crate::landmarks::NUM_SEGMENTS;
use crate::volume::VolumeError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("no pose fitted inside the volume after {attempts} attempts")]
    DoesNotFit { attempts: usize },
    #[error("dataset needs at least one case per split (train {n_train}, test {n_test})")]
    EmptySplit { n_train: usize, n_test: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Rest-pose geometry and sampling ranges for one skeleton segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// Length in mm at unit body scale.
    pub length_mm: f64,
    /// Relative length jitter, e.g. 0.1 for ±10%.
    pub length_jitter: f64,
    /// Rest direction from parent to child landmark in the body frame, need
    /// not be normalized.
    pub direction: [f64; 3],
    /// Half-angle of the cone directions are drawn from, degrees.
    pub cone_deg: f64,
    /// Standard deviation of the tube's radial intensity profile, mm.
    pub radius_mm: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Std of the multiplicative speckle factor around 1.
    pub speckle: f64,
    /// Std of additive Gaussian noise.
    pub additive: f64,
    /// Chance of one shadow cone per case.
    pub shadow_prob: f64,
    pub shadow_half_angle_deg: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { speckle: 0.3, additive: 0.1, shadow_prob: 0.3, shadow_half_angle_deg: 8.0 }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { speckle: 0.0, additive: 0.0, shadow_prob: 0.0, shadow_half_angle_deg: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    /// Indexed like `landmarks::SEGMENTS`.
    pub segments: [SegmentSpec; NUM_SEGMENTS],
    /// Uniform body scale range.
    pub scale_range: [f64; 2],
    /// Cap on the global rotation angle, degrees; 180 gives all of SO(3).
    pub max_rotation_deg: f64,
    /// Clearance between every landmark and the volume border, mm.
    pub margin_mm: f64,
    /// Added to the intensity of left-side limb segments.
    pub left_intensity_offset: f64,
    pub noise: NoiseSpec,
}

const fn seg(length_mm: f64, direction: [f64; 3], cone_deg: f64, radius_mm: f64, intensity: f64) -> SegmentSpec {
    SegmentSpec { length_mm, length_jitter: 0.1, direction, cone_deg, radius_mm, intensity }
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing_mm: 1.0,
            segments: [
                seg(11.0, [0.0, -0.35, -1.0], 12.0, 3.5, 0.9),
                seg(11.0, [0.0, -0.4, -1.0], 10.0, 2.2, 1.0),
                seg(11.0, [0.0, 0.4, -1.0], 10.0, 2.2, 1.0),
                seg(7.0, [1.0, 0.0, -0.25], 10.0, 1.6, 0.75),
                seg(9.0, [0.35, 0.45, -0.8], 35.0, 1.4, 0.8),
                seg(8.0, [-0.3, 0.9, 0.35], 35.0, 1.4, 0.8),
                seg(7.0, [-1.0, 0.0, -0.25], 10.0, 1.6, 0.75),
                seg(9.0, [-0.35, 0.45, -0.8], 35.0, 1.4, 0.8),
                seg(8.0, [0.3, 0.9, 0.35], 35.0, 1.4, 0.8),
                seg(5.5, [1.0, 0.15, 0.0], 10.0, 1.8, 0.8),
                seg(10.0, [0.25, 0.9, 0.35], 35.0, 1.5, 0.85),
                seg(9.0, [0.0, -0.25, -1.0], 35.0, 1.4, 0.85),
                seg(5.5, [-1.0, 0.15, 0.0], 10.0, 1.8, 0.8),
                seg(10.0, [-0.25, 0.9, 0.35], 35.0, 1.5, 0.85),
                seg(9.0, [0.0, -0.25, -1.0], 35.0, 1.4, 0.85),
            ],
            scale_range: [0.85, 1.15],
            max_rotation_deg: 180.0,
            margin_mm: 4.0,
            left_intensity_offset: 0.0,
            noise: NoiseSpec::default(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: &str| Err(PhantomError::InvalidSpec(m.into()));
        if self.dims.iter().any(|&d| d == 0) {
            return bad("volume extents must be positive");
        }
        if !(self.spacing_mm > 0.0 && self.spacing_mm.is_finite()) {
            return bad("spacing must be positive");
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("scale range must satisfy 0 < lo <= hi");
        }
        for s in &self.segments {
            let n = s.direction.iter().map(|v| v * v).sum::<f64>();
            if !(s.length_mm > 0.0 && n > 0.0 && s.radius_mm > 0.0 && (0.0..1.0).contains(&s.length_jitter)) {
                return bad("segments need positive length, radius and direction, and jitter in [0, 1)");
            }
            if !(0.0..=180.0).contains(&s.cone_deg) {
                return bad("cone angles must lie in [0, 180]");
            }
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return bad("max rotation must lie in [0, 180]");
        }
        let n = &self.noise;
        if n.speckle < 0.0 || n.additive < 0.0 || !(0.0..=1.0).contains(&n.shadow_prob) {
            return bad("noise levels must be non-negative and shadow_prob in [0, 1]");
        }
        Ok(())
    }
}

/// Which half of a dataset a case belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedCase {
    pub name: String,
    pub split: Split,
    pub seed: u64,
}

/// Seeds for `n_train + n_test` cases, all distinct, derived from `seed`.
pub fn make_dataset(n_train: usize, n_test: usize, seed: u64) -> Result<Vec<PlannedCase>, PhantomError> {
    use rand::{RngCore, SeedableRng};
    if n_train == 0 || n_test == 0 {
        return Err(PhantomError::EmptySplit { n_train, n_test });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut seen = alloc::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n_train + n_test);
    for i in 0..n_train + n_test {
        let mut s = rng.next_u64();
        while !seen.insert(s) {
            s = rng.next_u64();
        }
        let (split, name) = if i < n_train {
            (Split::Train, alloc::format!("train_{i:04}"))
        } else {
            (Split::Test, alloc::format!("test_{:04}", i - n_train))
        };
        out.push(PlannedCase { name, split, seed: s });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_seeds_are_distinct_and_split() {
        let plan = make_dataset(50, 10, 7).unwrap();
        let seeds: alloc::collections::BTreeSet<u64> = plan.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 60);
        assert_eq!(plan.iter().filter(|c| c.split == Split::Test).count(), 10);
        assert_eq!(plan, make_dataset(50, 10, 7).unwrap());
        assert!(make_dataset(0, 1, 0).is_err());
    }

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::default().validate().unwrap();
        let mut s = PhantomSpec::default();
        s.scale_range = [1.2, 1.0];
        assert!(s.validate().is_err());
    }
}
