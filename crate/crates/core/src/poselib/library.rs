use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::rigid::{fit, FitMode, RigidTransform};
use super::PoseLibError;
use crate::heatmap::{encode_clipped, DecodedPose, HeatmapStack};
use crate::landmarks::{NUM_LANDMARKS, REGISTRATION_SUBSET};
use crate::pose::{distance, Point, Pose};
use crate::tensor::Tensor;
use crate::volume::Grid;

/// Fewest usable registration landmarks for which retrieval is attempted.
pub const MIN_REGISTRATION_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub id: String,
    pub landmarks: [Point; NUM_LANDMARKS],
    pub present_mask: [bool; NUM_LANDMARKS],
    /// Free-form provenance, e.g. the case or augmentation it came from.
    pub source: String,
}

impl Atlas {
    pub fn from_pose(id: impl Into<String>, pose: &Pose, source: impl Into<String>) -> Self {
        Self { id: id.into(), landmarks: pose.landmarks, present_mask: pose.present, source: source.into() }
    }
}

/// Reference poses, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseLibrary {
    atlases: Vec<Atlas>,
}

impl PoseLibrary {
    /// Validates that ids are unique, coordinates finite, and the whole
    /// registration subset is present in every atlas.
    pub fn new(atlases: Vec<Atlas>) -> Result<Self, PoseLibError> {
        let mut ids = BTreeSet::new();
        for a in &atlases {
            if !ids.insert(a.id.as_str()) {
                return Err(PoseLibError::DuplicateId(a.id.clone()));
            }
            if let Some(&landmark) = REGISTRATION_SUBSET.iter().find(|&&j| !a.present_mask[j]) {
                return Err(PoseLibError::MissingLandmark { id: a.id.clone(), landmark });
            }
            if a.landmarks.iter().flatten().any(|v| !v.is_finite()) {
                return Err(PoseLibError::NonFinite(a.id.clone()));
            }
        }
        Ok(Self { atlases })
    }

    pub fn atlases(&self) -> &[Atlas] {
        &self.atlases
    }

    pub fn len(&self) -> usize {
        self.atlases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atlases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub atlas_id: String,
    /// Maps the atlas onto the query.
    pub transform: RigidTransform,
    /// Summed Euclidean residual over the registration landmarks, mm.
    pub error_mm: f64,
    pub aligned: Pose,
}

/// Best-aligned atlases, ascending by error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub entries: Vec<SupportEntry>,
    /// Landmark indices the alignment used.
    pub subset: Vec<usize>,
}

impl SupportSet {
    pub fn mean_error_mm(&self) -> f64 {
        self.entries.iter().map(|e| e.error_mm).sum::<f64>() / self.entries.len() as f64
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.atlas_id.clone()).collect()
    }
}

/// Aligns every atlas to the query over the registration landmarks the
/// query marks valid, then keeps the `k` with the lowest summed residual
/// (ties by id).
pub fn retrieve_support(
    query: &DecodedPose,
    library: &PoseLibrary,
    k: usize,
    mode: FitMode,
) -> Result<SupportSet, PoseLibError> {
    if k == 0 || k > library.len() {
        return Err(PoseLibError::InvalidK { k, n: library.len() });
    }
    let subset: Vec<usize> = REGISTRATION_SUBSET.iter().copied().filter(|&j| query.valid[j]).collect();
    if subset.len() < MIN_REGISTRATION_POINTS {
        return Err(PoseLibError::Declined { valid: subset.len() });
    }
    let dst: Vec<Point> = subset.iter().map(|&j| query.pose.landmarks[j]).collect();
    let mut entries = Vec::with_capacity(library.len());
    for atlas in library.atlases() {
        let src: Vec<Point> = subset.iter().map(|&j| atlas.landmarks[j]).collect();
        let f = match fit(&src, &dst, mode) {
            Ok(f) => f,
            // the query subset shape decides degeneracy, so every atlas would fail alike
            Err(PoseLibError::Degenerate { .. }) => return Err(PoseLibError::Declined { valid: subset.len() }),
            Err(e) => return Err(e),
        };
        let error_mm = src.iter().zip(&dst).map(|(s, d)| distance(f.transform.apply(*s), *d)).sum();
        let aligned = Pose {
            landmarks: atlas.landmarks.map(|p| f.transform.apply(p)),
            present: atlas.present_mask,
            spacing_mm: query.pose.spacing_mm,
        };
        entries.push(SupportEntry { atlas_id: atlas.id.clone(), transform: f.transform, error_mm, aligned });
    }
    entries.sort_by(|a, b| a.error_mm.total_cmp(&b.error_mm).then_with(|| a.atlas_id.cmp(&b.atlas_id)));
    entries.truncate(k);
    Ok(SupportSet { entries, subset })
}

/// Unweighted mean of the aligned atlases' Gaussian encodings.
pub fn build_label_proxy(support: &SupportSet, grid: &Grid, sigma_vox: f64) -> Result<HeatmapStack, PoseLibError> {
    if support.entries.is_empty() {
        return Err(PoseLibError::EmptySupport);
    }
    let mut acc = vec![0.0f64; NUM_LANDMARKS * grid.len()];
    for e in &support.entries {
        let s = encode_clipped(&e.aligned, grid, sigma_vox)?;
        for (a, &v) in acc.iter_mut().zip(s.tensor().data()) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / support.entries.len() as f64;
    let [nx, ny, nz] = grid.dims;
    let t = Tensor::from_vec(&[NUM_LANDMARKS, nz, ny, nx], acc.into_iter().map(|v| (v * inv) as f32).collect())
        .expect("grid extents are non-zero");
    Ok(HeatmapStack::from_tensor(*grid, t)?)
}
