use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DetectorError;
use crate::autodiff::{Graph, NodeId};
use crate::heatmap::HeatmapStack;
use crate::landmarks::NUM_LANDMARKS;
use crate::tensor::Tensor;
use crate::volume::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Pooling levels.
    pub depth: usize,
    /// Channels at the first level; doubled at each level below.
    pub base_channels: usize,
    pub convs_per_block: usize,
    pub kernel: usize,
    /// Downscale ratio applied to volumes before they enter the network.
    pub input_scale: f64,
    /// Gaussian heatmap standard deviation in working-resolution voxels.
    pub sigma_vox: f64,
    pub decode_window: usize,
    pub confidence_floor: f64,
    /// Zero-mean, unit-variance intensity normalization per volume.
    pub normalize_intensity: bool,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            convs_per_block: 2,
            kernel: 3,
            input_scale: 0.5,
            sigma_vox: 2.0,
            decode_window: 5,
            confidence_floor: 0.1,
            normalize_intensity: true,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::InvalidConfig(m.into()));
        if self.depth < 1 {
            return bad("depth must be at least 1");
        }
        if self.base_channels < 1 {
            return bad("base_channels must be at least 1");
        }
        if self.convs_per_block < 2 {
            return bad("convs_per_block must be at least 2");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        if !(self.input_scale > 0.0 && self.input_scale <= 1.0) {
            return bad("input_scale must lie in (0, 1]");
        }
        if !(self.sigma_vox > 0.0) {
            return bad("sigma_vox must be positive");
        }
        if self.decode_window % 2 == 0 {
            return bad("decode_window must be odd");
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }
}

/// Node ids the training and inference code needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorNodes {
    pub input: NodeId,
    pub head: NodeId,
    pub target: NodeId,
    pub loss: NodeId,
}

/// The network graph plus the configuration it was built from. The graph is
/// shape-specific; [`Detector::with_dims`] rebuilds it around the same
/// parameters for other extents.
#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub graph: Graph<f32>,
    pub nodes: DetectorNodes,
    dims: [usize; 3],
}

pub const INPUT_NAME: &str = "volume";
pub const TARGET_NAME: &str = "target";

/// Builds the U-net-like detector for working extents `dims` (x, y, z),
/// parameters initialized from `cfg.seed`.
///
/// Encoder level `l` runs `convs_per_block` conv-BN-ReLU units at
/// `base·2^l` channels and pools; the bottleneck runs the same at
/// `base·2^depth`. Each decoder level upsamples with a transposed conv
/// (plus BN and ReLU), concatenates the encoder skip and runs the conv
/// units. A 1×1×1 conv maps to one channel per landmark.
const HEAD_INIT_SCALE: f32 = 0.01;

pub fn build_detector(cfg: &DetectorConfig, dims: [usize; 3]) -> Result<Detector, DetectorError> {
    let mut det = build_graph(cfg, dims)?;
    det.graph.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    // near-zero heatmaps at the start keep early steps from chasing a noisy head
    for p in det.graph.params_mut().iter_mut().filter(|p| p.name == "head.weight") {
        p.value.data_mut().iter_mut().for_each(|v| *v *= HEAD_INIT_SCALE);
    }
    Ok(det)
}

fn build_graph(cfg: &DetectorConfig, dims: [usize; 3]) -> Result<Detector, DetectorError> {
    cfg.validate()?;
    let m = cfg.divisor();
    if dims.iter().any(|&d| d == 0 || d % m != 0) {
        let padding = dims.map(|d| if d == 0 { m } else { (m - d % m) % m });
        return Err(DetectorError::Indivisible { dims, multiple: m, padding });
    }
    let [nx, ny, nz] = dims;
    let k = cfg.kernel;
    let pad = k / 2;
    let mut g = Graph::<f32>::new();
    let input = g.input(INPUT_NAME, &[1, nz, ny, nx])?;

    let unit = |g: &mut Graph<f32>, prefix: &str, x: NodeId, ch: usize| -> Result<NodeId, DetectorError> {
        let c = g.conv3d(&format!("{prefix}.conv"), x, ch, k, pad)?;
        let b = g.batch_norm(&format!("{prefix}.bn"), c)?;
        Ok(g.relu(&format!("{prefix}.relu"), b)?)
    };

    let mut x = input;
    let mut skips = Vec::with_capacity(cfg.depth);
    for level in 0..cfg.depth {
        let ch = cfg.base_channels << level;
        for i in 0..cfg.convs_per_block {
            x = unit(&mut g, &format!("enc{level}.{i}"), x, ch)?;
        }
        skips.push(x);
        x = g.max_pool3d(&format!("enc{level}.pool"), x)?;
    }
    for i in 0..cfg.convs_per_block {
        x = unit(&mut g, &format!("bottleneck.{i}"), x, cfg.base_channels << cfg.depth)?;
    }
    for level in (0..cfg.depth).rev() {
        let ch = cfg.base_channels << level;
        let up = g.deconv3d(&format!("dec{level}.up"), x, ch)?;
        let up = g.batch_norm(&format!("dec{level}.up.bn"), up)?;
        let up = g.relu(&format!("dec{level}.up.relu"), up)?;
        x = g.concat(&format!("dec{level}.concat"), &[up, skips[level]])?;
        for i in 0..cfg.convs_per_block {
            x = unit(&mut g, &format!("dec{level}.{i}"), x, ch)?;
        }
    }
    let head = g.conv3d("head", x, NUM_LANDMARKS, 1, 0)?;
    let target = g.input(TARGET_NAME, &[NUM_LANDMARKS, nz, ny, nx])?;
    let loss = g.l2_loss("loss", head, target)?;
    Ok(Detector { cfg: cfg.clone(), graph: g, nodes: DetectorNodes { input, head, target, loss }, dims })
}

impl Detector {
    /// Working spatial extents (x, y, z) the graph was built for.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Same parameters, graph rebuilt for other extents.
    pub fn with_dims(&self, dims: [usize; 3]) -> Result<Detector, DetectorError> {
        if dims == self.dims {
            return Ok(self.clone());
        }
        let mut det = build_graph(&self.cfg, dims)?;
        det.set_params(self.params())?;
        det.graph.set_checkpoints(remap_checkpoints(&self.graph, &det.graph))?;
        Ok(det)
    }

    pub fn params(&self) -> Vec<Tensor<f32>> {
        self.graph.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_params(&mut self, values: Vec<Tensor<f32>>) -> Result<(), DetectorError> {
        let params = self.graph.params_mut();
        if values.len() != params.len() {
            return Err(DetectorError::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                params.len(),
                values.len()
            )));
        }
        for (p, v) in params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(DetectorError::Graph(crate::autodiff::GraphError::ShapeMismatch {
                    node: p.node,
                    expected: p.value.shape().to_vec(),
                    actual: v.shape().to_vec(),
                }));
            }
        }
        for (p, v) in params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    /// Runs the network on a prepared `[1, z, y, x]` tensor and wraps the
    /// head output as a heatmap stack on `grid`.
    pub fn infer_tensor(&mut self, input: &Tensor<f32>, grid: Grid) -> Result<HeatmapStack, DetectorError> {
        let out = self.graph.evaluate(self.nodes.head, &[(INPUT_NAME, input)])?;
        Ok(HeatmapStack::from_tensor(grid, out)?)
    }
}

fn remap_checkpoints(from: &Graph<f32>, to: &Graph<f32>) -> alloc::collections::BTreeSet<NodeId> {
    // node ids only depend on the config, not on the extents
    from.checkpoints().iter().copied().filter(|&id| id < to.nodes().len()).collect()
}
