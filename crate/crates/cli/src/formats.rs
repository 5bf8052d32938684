//! On-disk formats: raw volumes with JSON sidecars, pose and library JSON,
//! model directories, dataset manifests and evaluation reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use volmark_core::autodiff::GraphDescription;
use volmark_core::detector::{build_detector, Detector, DetectorConfig};
use volmark_core::heatmap::DecodedPose;
use volmark_core::landmarks::{name, NUM_LANDMARKS};
use volmark_core::metrics::EvalReport;
use volmark_core::phantom::{Provenance, Split};
use volmark_core::poselib::Atlas;
use volmark_core::pose::Pose;
use volmark_core::ssl::RefineStatus;
use volmark_core::tensor::Tensor;
use volmark_core::volume::{Grid, Volume};

use crate::config::ConfigStamp;
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::json(path))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(CliError::json(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut f = fs::File::create(path).map_err(CliError::io(path))?;
    f.write_all(bytes).map_err(CliError::io(path))
}

fn bad(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn check_version(path: &Path, version: u32) -> Result<(), CliError> {
    if version != FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- volumes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub version: u32,
    /// Extents along x, y, z; x varies fastest in the data file.
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    #[serde(default)]
    pub origin_mm: [f64; 3],
    pub dtype: String,
    /// File name of the raw data, relative to the header.
    pub data: String,
}

/// Sidecar path for a volume stem: `dir/case` -> `dir/case.json`.
pub fn volume_header_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

/// Writes `stem.raw` (little-endian f32) and the `stem.json` header.
pub fn write_volume(stem: &Path, volume: &Volume) -> Result<PathBuf, CliError> {
    let raw = stem.with_extension("raw");
    let bytes: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(&raw, &bytes)?;
    let header = VolumeHeader {
        version: FORMAT_VERSION,
        dims: volume.grid.dims,
        spacing_mm: volume.grid.spacing_mm,
        origin_mm: volume.grid.origin_mm,
        dtype: "f32le".into(),
        data: raw.file_name().expect("stem has a file name").to_string_lossy().into_owned(),
    };
    let path = volume_header_path(stem);
    write_json(&path, &header)?;
    Ok(path)
}

/// Reads a volume from its JSON header.
pub fn read_volume(header_path: &Path) -> Result<Volume, CliError> {
    let h: VolumeHeader = read_json(header_path)?;
    check_version(header_path, h.version)?;
    if h.dtype != "f32le" {
        return Err(bad(header_path, format!("unsupported dtype '{}'", h.dtype)));
    }
    let raw = header_path.parent().unwrap_or(Path::new(".")).join(&h.data);
    let bytes = fs::read(&raw).map_err(CliError::io(&raw))?;
    let n: usize = h.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(bad(&raw, format!("expected {} bytes for dims {:?}, found {}", n * 4, h.dims, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut grid = Grid::new(h.dims, h.spacing_mm)?;
    grid.origin_mm = h.origin_mm;
    Ok(Volume::new(grid, data)?)
}

// ------------------------------------------------------------------ poses

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkEntry {
    /// 1-based.
    pub index: usize,
    pub name: String,
    /// Absent landmarks have no coordinates.
    pub xyz_mm: Option<[f64; 3]>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub version: u32,
    /// Spacing of the volume the coordinates refer to.
    pub spacing_mm: f64,
    pub landmarks: Vec<LandmarkEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none", flatten)]
    pub stamp: Option<ConfigStamp>,
}

impl PoseFile {
    /// Ground truth: valid exactly where present.
    pub fn from_pose(pose: &Pose) -> Self {
        let landmarks = (0..NUM_LANDMARKS)
            .map(|j| LandmarkEntry {
                index: j + 1,
                name: name(j).into(),
                xyz_mm: pose.present[j].then_some(pose.landmarks[j]),
                valid: pose.present[j],
                confidence: None,
            })
            .collect();
        Self { version: FORMAT_VERSION, spacing_mm: pose.spacing_mm, landmarks, refine: None, stamp: None }
    }

    /// A prediction keeps coordinates for every landmark, valid or not.
    pub fn from_decoded(d: &DecodedPose) -> Self {
        let landmarks = (0..NUM_LANDMARKS)
            .map(|j| LandmarkEntry {
                index: j + 1,
                name: name(j).into(),
                xyz_mm: Some(d.pose.landmarks[j]),
                valid: d.valid[j],
                confidence: Some(d.confidence[j]),
            })
            .collect();
        Self { version: FORMAT_VERSION, spacing_mm: d.pose.spacing_mm, landmarks, refine: None, stamp: None }
    }

    /// Landmarks with coordinates count as present.
    pub fn to_pose(&self, path: &Path) -> Result<Pose, CliError> {
        check_version(path, self.version)?;
        if self.landmarks.len() != NUM_LANDMARKS {
            return Err(bad(path, format!("expected {NUM_LANDMARKS} landmarks, found {}", self.landmarks.len())));
        }
        let mut pose = Pose::new([[0.0; 3]; NUM_LANDMARKS], self.spacing_mm);
        for (j, e) in self.landmarks.iter().enumerate() {
            if e.index != j + 1 {
                return Err(bad(path, format!("landmark {} listed at position {}", e.index, j + 1)));
            }
            match e.xyz_mm {
                Some(p) if p.iter().all(|v| v.is_finite()) => pose.landmarks[j] = p,
                Some(_) => return Err(bad(path, format!("landmark {} has non-finite coordinates", e.index))),
                None => pose.present[j] = false,
            }
        }
        Ok(pose)
    }
}

pub fn write_pose(path: &Path, file: &PoseFile) -> Result<(), CliError> {
    write_json(path, file)
}

pub fn read_pose(path: &Path) -> Result<Pose, CliError> {
    read_json::<PoseFile>(path)?.to_pose(path)
}

// ---------------------------------------------------------------- library

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryFile {
    pub version: u32,
    #[serde(flatten)]
    pub stamp: ConfigStamp,
    pub atlases: Vec<Atlas>,
}

// ------------------------------------------------------------------ model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    #[serde(flatten)]
    pub stamp: ConfigStamp,
    pub detector: DetectorConfig,
    /// Working extents the saved graph was built for.
    pub dims: [usize; 3],
    pub params: Vec<ParamEntry>,
}

pub const MODEL_FILE: &str = "detector.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const GRAPH_FILE: &str = "graph.json";

/// Writes `detector.json`, `params.bin` (little-endian f32) and
/// `graph.json` into `dir`.
pub fn save_model(dir: &Path, det: &Detector, stamp: &ConfigStamp) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    let mut params = Vec::new();
    for p in det.graph.params() {
        params.push(ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset: bytes.len() / 4 });
        bytes.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()));
    }
    write_bytes(&dir.join(PARAMS_FILE), &bytes)?;
    let model = ModelFile {
        version: FORMAT_VERSION,
        stamp: stamp.clone(),
        detector: det.cfg.clone(),
        dims: det.dims(),
        params,
    };
    write_json(&dir.join(MODEL_FILE), &model)?;
    let graph: GraphDescription = det.graph.describe();
    write_json(&dir.join(GRAPH_FILE), &graph)
}

pub fn load_model(dir: &Path) -> Result<(Detector, ModelFile), CliError> {
    let path = dir.join(MODEL_FILE);
    let model: ModelFile = read_json(&path)?;
    check_version(&path, model.version)?;
    let raw_path = dir.join(PARAMS_FILE);
    let raw = fs::read(&raw_path).map_err(CliError::io(&raw_path))?;
    let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut det = build_detector(&model.detector, model.dims)?;
    if model.params.len() != det.graph.params().len() {
        return Err(bad(&path, "parameter list does not match the detector config"));
    }
    let mut tensors = Vec::with_capacity(model.params.len());
    for (entry, p) in model.params.iter().zip(det.graph.params()) {
        if entry.name != p.name || entry.shape != p.value.shape() {
            return Err(bad(&path, format!("parameter '{}' does not match the detector layout", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let slice = values.get(entry.offset..entry.offset + n).ok_or_else(|| bad(&raw_path, "truncated parameters"))?;
        tensors.push(Tensor::from_vec(&entry.shape, slice.to_vec()).expect("shape checked"));
    }
    det.set_params(tensors)?;
    Ok((det, model))
}

// --------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    /// Paths relative to the manifest.
    pub volume: String,
    pub pose: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(flatten)]
    pub stamp: ConfigStamp,
    pub seed: u64,
    pub cases: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// A case resolved to absolute paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRef {
    pub name: String,
    pub volume: PathBuf,
    pub pose: Option<PathBuf>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(CliError::Usage(format!("no dataset manifest at {}", path.display())));
    }
    let m: Manifest = read_json(&path)?;
    check_version(&path, m.version)?;
    Ok(m)
}

/// Cases of one split, or all cases when `split` is `None`.
pub fn dataset_cases(dir: &Path, split: Option<Split>) -> Result<Vec<CaseRef>, CliError> {
    let m = read_manifest(dir)?;
    Ok(m.cases
        .iter()
        .filter(|c| split.is_none_or(|s| s == c.split))
        .map(|c| CaseRef { name: c.name.clone(), volume: dir.join(&c.volume), pose: Some(dir.join(&c.pose)) })
        .collect())
}

// ---------------------------------------------------------------- reports

/// Per-landmark table: one row per statistic, columns L1..L16 and mean.
pub fn table_csv(report: &EvalReport) -> String {
    let mut s = String::from("metric");
    for j in 1..=NUM_LANDMARKS {
        s.push_str(&format!(",L{j}"));
    }
    s.push_str(",mean\n");
    let cell = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.4}"));
    s.push_str("euclidean_mm");
    for v in report.mean_mm {
        s.push_str(&format!(",{}", cell(v)));
    }
    s.push_str(&format!(",{:.4}\n", report.overall_mean_mm));
    s.push_str("auc_percent");
    for v in report.auc_percent {
        s.push_str(&format!(",{}", cell(v)));
    }
    s.push_str(&format!(",{:.4}\n", report.overall_auc_percent));
    s
}

/// PCK samples: one row per threshold, columns L1..L16 and pooled.
pub fn pck_csv(report: &EvalReport) -> String {
    let mut s = String::from("threshold_mm");
    for j in 1..=NUM_LANDMARKS {
        s.push_str(&format!(",L{j}"));
    }
    s.push_str(",pooled\n");
    for (i, t) in report.thresholds_mm.iter().enumerate() {
        s.push_str(&format!("{t}"));
        for c in &report.pck {
            s.push_str(&c.as_ref().map_or_else(|| ",".to_string(), |c| format!(",{:.6}", c[i])));
        }
        s.push_str(&format!(",{:.6}\n", report.pooled_pck[i]));
    }
    s
}
