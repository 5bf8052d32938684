//! Reverse-mode automatic differentiation over an explicit graph.
//!
//! A [`Graph`] is built node by node, then driven either by a plain
//! forward/backward pair that keeps every value alive, or by a discarding
//! forward followed by [`Graph::backward_checkpointed`], which rebuilds the
//! dropped values one segment at a time. Both backward passes return the
//! same bits: kernels reduce in a fixed order and backward steps run in the
//! same sequence.
//!
//! ```
//! use volmark_core::autodiff::Graph;
//! use volmark_core::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.input("x", &[1, 2, 2, 2]).unwrap();
//! let y = g.conv3d("conv", x, 1, 1, 0).unwrap();
//! let t = g.input("target", &[1, 2, 2, 2]).unwrap();
//! g.l2_loss("loss", y, t).unwrap();
//! let xv = Tensor::full(&[1, 2, 2, 2], 1.0);
//! let tv = Tensor::zeros(&[1, 2, 2, 2]);
//! let loss = g.forward(&[("x", &xv), ("target", &tv)], false).unwrap();
//! assert_eq!(loss, 0.0);
//! let grads = g.backward_plain().unwrap();
//! assert_eq!(grads.len(), 2);
//! ```

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

mod checkpoint;
mod describe;
pub mod gradcheck;
mod graph;
mod memory;
pub mod ops;
mod schedule;

pub use checkpoint::{select_checkpoints, sqrt_spacing, CheckpointPolicy};
pub use describe::{GraphDescription, NodeDescription, ParamDescription, GRAPH_FORMAT_VERSION};
pub use graph::{Graph, Node, Param};
pub use memory::{MemMeter, MemoryPlan, PassPeaks, Peak};
pub use ops::Op;

use crate::tensor::Tensor;

pub type NodeId = usize;
pub type ParamId = usize;

/// Gradient of the loss for every learnable parameter reachable from it.
pub type GradientMap<T> = BTreeMap<ParamId, Tensor<T>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node {node}: shape mismatch, expected {expected:?}, got {actual:?}")]
    ShapeMismatch { node: NodeId, expected: Vec<usize>, actual: Vec<usize> },
    #[error("a tensor of shape {shape:?} cannot hold {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("no value bound for graph input '{0}'")]
    MissingInput(String),
    #[error("graph has no input named '{0}'")]
    UnknownInput(String),
    #[error("graph has no loss node")]
    NoLoss,
    #[error("node {node} ({kind}) produced a non-finite value")]
    NonFinite { node: NodeId, kind: &'static str },
    #[error("value of node {node} is not available; run forward first")]
    MissingValue { node: NodeId },
    #[error("backward pass needs a forward pass run with discard={expected_discard}")]
    ForwardModeMismatch { expected_discard: bool },
    #[error("segment {segment}: upstream value of node {node} was discarded")]
    DiscardedCheckpoint { segment: usize, node: NodeId },
    #[error("node {node}: allocating {requested} bytes on top of {live} exceeds the {cap}-byte cap")]
    MemoryCapExceeded { node: NodeId, requested: usize, live: usize, cap: usize },
    #[error("unsupported graph format version {0}")]
    UnsupportedVersion(u32),
}
