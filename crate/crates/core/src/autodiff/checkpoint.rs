use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::ops::Op;
use super::{GraphError, NodeId};
use crate::tensor::Real;

/// How checkpoint nodes are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// The output of every conv unit (its ReLU) and every pooling node,
    /// except nodes feeding a channel concatenation directly: those stay
    /// live across the skip connection instead.
    BlockBoundary,
    /// Every node whose id is a multiple of `k`.
    EveryK { k: usize },
    /// An explicit list, validated against the graph.
    Manual { nodes: Vec<NodeId> },
}

/// Returns the checkpoint set for `policy`. The automatic policies also list
/// the graph inputs and the loss node, which are always retained.
pub fn select_checkpoints<T: Real>(graph: &Graph<T>, policy: &CheckpointPolicy) -> Result<BTreeSet<NodeId>, GraphError> {
    let nodes = graph.nodes();
    let implicit = |id: NodeId| matches!(nodes[id].op, Op::Input { .. }) || Some(id) == graph.loss_node();
    let set = match policy {
        CheckpointPolicy::BlockBoundary => nodes
            .iter()
            .filter(|n| {
                implicit(n.id)
                    || (matches!(n.op, Op::Relu | Op::MaxPool3d)
                        && !graph.consumers(n.id).iter().any(|&c| matches!(nodes[c].op, Op::Concat)))
            })
            .map(|n| n.id)
            .collect(),
        CheckpointPolicy::EveryK { k } => {
            let k = (*k).max(1);
            (0..nodes.len()).filter(|&id| id % k == 0 || implicit(id)).collect()
        }
        CheckpointPolicy::Manual { nodes: list } => {
            if let Some(&bad) = list.iter().find(|&&id| id >= nodes.len()) {
                return Err(GraphError::UnknownNode(bad));
            }
            list.iter().copied().collect()
        }
    };
    Ok(set)
}

/// Integer square root, the classic every-k spacing for a chain.
pub fn sqrt_spacing(n: usize) -> usize {
    let mut k = 1;
    while (k + 1) * (k + 1) <= n {
        k += 1;
    }
    k
}
