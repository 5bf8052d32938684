//! The subcommands, as library functions over resolved configs and paths.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use volmark_core::detector::{build_detector, infer, train_prepared, prepare_case, EpochSummary, PreparedCase};
use volmark_core::heatmap::decode;
use volmark_core::landmarks::NUM_LANDMARKS;
use volmark_core::metrics::{evaluate, threshold_grid, EvalReport};
use volmark_core::phantom::{make_dataset, sample_case, Split};
use volmark_core::poselib::{Atlas, PoseLibrary};
use volmark_core::pose::Pose;
use volmark_core::ssl::{refine, IterationRecord, RefineStatus};

use crate::config::{ConfigStamp, RunConfig};
use crate::error::CliError;
use crate::formats::{
    dataset_cases, load_model, pck_csv, read_json, read_manifest, read_pose, read_volume, save_model, table_csv,
    write_bytes, write_json, write_pose, write_volume, CaseRef, LibraryFile, Manifest, ManifestEntry, PoseFile,
    FORMAT_VERSION, MANIFEST_FILE,
};

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{what} directory {} does not exist", path.display())));
    }
    Ok(())
}

// ------------------------------------------------------------ phantom-gen

/// Generates the phantom dataset described by `cfg` into `out`.
pub fn phantom_gen(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let plan = make_dataset(d.n_train, d.n_test, d.seed)?;
    let stem = |c: &volmark_core::phantom::PlannedCase| {
        let split = match c.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        format!("{split}/{}", c.name)
    };
    if !overwrite {
        let mut targets = vec![out.join(MANIFEST_FILE)];
        for c in &plan {
            let s = stem(c);
            targets.extend([format!("{s}.json"), format!("{s}.raw"), format!("{s}.pose.json")].map(|p| out.join(p)));
        }
        if let Some(hit) = targets.into_iter().find(|p| p.exists()) {
            return Err(CliError::Collision(hit));
        }
    }
    let stamp = cfg.stamp();
    let mut cases = Vec::with_capacity(plan.len());
    for c in &plan {
        let case = sample_case(&cfg.phantom, c.seed)?;
        let s = stem(c);
        write_volume(&out.join(&s), &case.volume)?;
        let mut pose_file = PoseFile::from_pose(&case.pose);
        pose_file.stamp = Some(stamp.clone());
        write_pose(&out.join(format!("{s}.pose.json")), &pose_file)?;
        cases.push(ManifestEntry {
            name: c.name.clone(),
            split: c.split,
            seed: c.seed,
            volume: format!("{s}.json"),
            pose: format!("{s}.pose.json"),
            provenance: case.provenance,
        });
    }
    let manifest = Manifest { version: FORMAT_VERSION, stamp, seed: d.seed, cases };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    info!("wrote {} cases to {}", manifest.cases.len(), out.display());
    Ok(manifest)
}

// ------------------------------------------------------------------ train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    #[serde(flatten)]
    pub stamp: ConfigStamp,
    pub cases: usize,
    pub steps: usize,
    pub epochs: Vec<EpochSummary>,
    pub final_loss: f64,
    pub peak_forward_bytes: usize,
    pub peak_backward_bytes: usize,
}

fn load_training_set(cfg: &RunConfig, data: &Path) -> Result<Vec<PreparedCase>, CliError> {
    require_dir(data, "dataset")?;
    let refs = dataset_cases(data, Some(Split::Train))?;
    if refs.is_empty() {
        return Err(CliError::Usage(format!("dataset {} has no training cases", data.display())));
    }
    refs.iter()
        .enumerate()
        .map(|(i, c)| {
            let volume = read_volume(&c.volume)?;
            let pose = read_pose(c.pose.as_ref().expect("dataset cases carry poses"))?;
            Ok(prepare_case(&volume, &pose, &cfg.detector, i)?)
        })
        .collect()
}

/// Trains a detector on the training split of `data` and saves it in `out`
/// with `loss.csv` and `train.json`.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let cases = load_training_set(cfg, data)?;
    let dims = cases[0].input.grid.dims;
    let mut det = build_detector(&cfg.detector, dims)?;
    info!("training on {} cases at working extents {:?}, {} parameters", cases.len(), dims, det.graph.param_count());
    let policy = cfg.gcp.policy();
    let report = train_prepared(&mut det, &cases, &cfg.train, policy.as_ref(), |s, _| {
        info!("epoch {} mean loss {:.6e}", s.epoch, s.mean_loss);
    })?;
    // inference graphs carry no checkpoints
    det.graph.set_checkpoints(Default::default()).map_err(volmark_core::detector::DetectorError::from)?;
    let stamp = cfg.stamp();
    save_model(out, &det, &stamp)?;
    let mut csv = String::from("epoch,step,loss\n");
    for r in &report.steps {
        csv.push_str(&format!("{},{},{:e}\n", r.epoch, r.step, r.loss));
    }
    write_bytes(&out.join("loss.csv"), csv.as_bytes())?;
    let summary = TrainSummary {
        stamp,
        cases: cases.len(),
        steps: report.steps.len(),
        final_loss: report.epochs.last().map_or(f64::NAN, |e| e.mean_loss),
        epochs: report.epochs,
        peak_forward_bytes: report.peaks.forward.bytes,
        peak_backward_bytes: report.peaks.backward.bytes,
    };
    write_json(&out.join("train.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------- infer / refine

/// Inputs are either a dataset directory (one split) or volume headers.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    Dataset { dir: PathBuf, split: Option<Split> },
    Volumes(Vec<PathBuf>),
}

impl Inputs {
    pub fn resolve(&self) -> Result<Vec<CaseRef>, CliError> {
        match self {
            Inputs::Dataset { dir, split } => {
                require_dir(dir, "dataset")?;
                dataset_cases(dir, *split)
            }
            Inputs::Volumes(paths) => paths
                .iter()
                .map(|p| {
                    if !p.is_file() {
                        return Err(CliError::Usage(format!("volume header {} does not exist", p.display())));
                    }
                    let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok(CaseRef { name, volume: p.clone(), pose: None })
                })
                .collect(),
        }
    }
}

fn check_model_config(cfg: &RunConfig, model_cfg: &volmark_core::detector::DetectorConfig) {
    if &cfg.detector != model_cfg {
        warn!("detector settings in the config differ from the model's; using the model's");
    }
}

/// Writes `<name>.pose.json` per input volume; with `dump_heatmaps`, also
/// `<name>.heatmaps/L<j>` volumes on the working grid.
pub fn infer_cmd(cfg: &RunConfig, model: &Path, inputs: &Inputs, out: &Path, dump_heatmaps: bool) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    require_dir(model, "model")?;
    let (mut det, file) = load_model(model)?;
    check_model_config(cfg, &file.detector);
    let stamp = cfg.stamp();
    let mut written = Vec::new();
    for case in inputs.resolve()? {
        let volume = read_volume(&case.volume)?;
        let stack = infer(&mut det, &volume)?;
        let mut decoded = decode(&stack, det.cfg.decode_window, det.cfg.confidence_floor)?;
        decoded.pose.spacing_mm = volume.spacing_mm();
        let mut pf = PoseFile::from_decoded(&decoded);
        pf.stamp = Some(stamp.clone());
        let path = out.join(format!("{}.pose.json", case.name));
        write_pose(&path, &pf)?;
        if dump_heatmaps {
            let dir = out.join(format!("{}.heatmaps", case.name));
            for j in 0..NUM_LANDMARKS {
                let v = volmark_core::volume::Volume::new(*stack.grid(), stack.channel(j).to_vec())?;
                write_volume(&dir.join(format!("L{}", j + 1)), &v)?;
            }
        }
        info!("{}: {} of {} landmarks valid", case.name, decoded.valid_count(), NUM_LANDMARKS);
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineTraceFile {
    pub version: u32,
    #[serde(flatten)]
    pub stamp: ConfigStamp,
    pub case: String,
    pub status: RefineStatus,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    #[serde(flatten)]
    pub stamp: ConfigStamp,
    pub cases: Vec<RefineCaseSummary>,
    pub completed: usize,
    pub declined: usize,
    pub aborted: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineCaseSummary {
    pub case: String,
    pub status: Option<RefineStatus>,
    pub error: Option<String>,
    /// Proxy loss before the first and after the last update.
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

/// Refines every input independently from the same base model. Writes
/// `<name>.pose.json` and `<name>.trace.json` per case plus `refine.json`.
/// A case that fails is reported in the summary; the rest still run.
pub fn refine_cmd(cfg: &RunConfig, model: &Path, library: &Path, inputs: &Inputs, out: &Path) -> Result<RefineSummary, CliError> {
    cfg.validate()?;
    require_dir(model, "model")?;
    if !library.is_file() {
        return Err(CliError::Usage(format!("library file {} does not exist", library.display())));
    }
    let (det, file) = load_model(model)?;
    check_model_config(cfg, &file.detector);
    let lib_file: LibraryFile = read_json(library)?;
    let lib = PoseLibrary::new(lib_file.atlases)?;
    let stamp = cfg.stamp();
    let mut summary =
        RefineSummary { stamp: stamp.clone(), cases: Vec::new(), completed: 0, declined: 0, aborted: 0, failed: 0 };
    for case in inputs.resolve()? {
        let result = read_volume(&case.volume).and_then(|v| Ok(refine(&det, &v, &lib, &cfg.refine)?));
        match result {
            Ok(o) => {
                match o.status {
                    RefineStatus::Completed => summary.completed += 1,
                    RefineStatus::Declined { .. } => summary.declined += 1,
                    RefineStatus::Aborted { .. } => summary.aborted += 1,
                }
                let mut pf = PoseFile::from_decoded(&o.refined);
                pf.refine = Some(o.status);
                pf.stamp = Some(stamp.clone());
                write_pose(&out.join(format!("{}.pose.json", case.name)), &pf)?;
                let trace = RefineTraceFile {
                    version: FORMAT_VERSION,
                    stamp: stamp.clone(),
                    case: case.name.clone(),
                    status: o.status,
                    iterations: o.trace.clone(),
                };
                write_json(&out.join(format!("{}.trace.json", case.name)), &trace)?;
                info!("{}: {:?} after {} iterations", case.name, o.status, o.trace.len());
                summary.cases.push(RefineCaseSummary {
                    case: case.name,
                    status: Some(o.status),
                    error: None,
                    first_loss: o.trace.first().map(|r| r.loss_before),
                    last_loss: o.trace.last().map(|r| r.loss_after),
                });
            }
            Err(e) => {
                warn!("{}: {e}", case.name);
                summary.failed += 1;
                summary.cases.push(RefineCaseSummary {
                    case: case.name,
                    status: None,
                    error: Some(e.to_string()),
                    first_loss: None,
                    last_loss: None,
                });
            }
        }
    }
    write_json(&out.join("refine.json"), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub version: u32,
    #[serde(flatten)]
    pub stamp: ConfigStamp,
    pub case_names: Vec<String>,
    pub report: EvalReport,
}

/// Ground truth from a dataset directory (its test split) or from a
/// directory of `*.pose.json` files.
fn ground_truth(gt: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    require_dir(gt, "ground-truth")?;
    if gt.join(MANIFEST_FILE).is_file() {
        return Ok(dataset_cases(gt, Some(Split::Test))?
            .into_iter()
            .map(|c| (c.name, c.pose.expect("dataset cases carry poses")))
            .collect());
    }
    pose_files(gt)
}

fn pose_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        let file = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(name) = file.strip_suffix(".pose.json") {
            out.push((name.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

/// Scores predictions in `pred` against `gt`, writing `report.json`,
/// `table.csv` and `pck_curve.csv` into `out`.
pub fn eval_cmd(cfg: &RunConfig, pred: &Path, gt: &Path, out: &Path) -> Result<ReportFile, CliError> {
    cfg.validate()?;
    require_dir(pred, "prediction")?;
    let truths = ground_truth(gt)?;
    if truths.is_empty() {
        return Err(CliError::Usage(format!("no ground-truth poses under {}", gt.display())));
    }
    let mut preds: Vec<Pose> = Vec::with_capacity(truths.len());
    let mut gts = Vec::with_capacity(truths.len());
    for (name, path) in &truths {
        let p = pred.join(format!("{name}.pose.json"));
        if !p.is_file() {
            return Err(CliError::Usage(format!("no prediction for case '{name}' in {}", pred.display())));
        }
        preds.push(read_pose(&p)?);
        gts.push(read_pose(path)?);
    }
    let grid = threshold_grid(cfg.eval.max_threshold_mm, cfg.eval.threshold_step_mm);
    let report = evaluate(&preds, &gts, &grid)?;
    let file = ReportFile {
        version: FORMAT_VERSION,
        stamp: cfg.stamp(),
        case_names: truths.into_iter().map(|(n, _)| n).collect(),
        report,
    };
    write_json(&out.join("report.json"), &file)?;
    write_bytes(&out.join("table.csv"), table_csv(&file.report).as_bytes())?;
    write_bytes(&out.join("pck_curve.csv"), pck_csv(&file.report).as_bytes())?;
    info!("mean error {:.3} mm, AUC {:.2}%", file.report.overall_mean_mm, file.report.overall_auc_percent);
    Ok(file)
}

// ---------------------------------------------------------------- library

/// Builds a pose library from the ground-truth poses of a dataset's
/// training split.
pub fn library_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<LibraryFile, CliError> {
    cfg.validate()?;
    require_dir(data, "dataset")?;
    let manifest = read_manifest(data)?;
    let mut atlases = Vec::new();
    for c in manifest.cases.iter().filter(|c| c.split == Split::Train) {
        let pose = read_pose(&data.join(&c.pose))?;
        atlases.push(Atlas::from_pose(c.name.clone(), &pose, format!("seed {}", c.seed)));
    }
    // validates before anything is written
    PoseLibrary::new(atlases.clone())?;
    let file = LibraryFile { version: FORMAT_VERSION, stamp: cfg.stamp(), atlases };
    write_json(out, &file)?;
    Ok(file)
}
