//! Versioned, serializable structure of a graph (no values).

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::ops::Op;
use super::{GraphError, NodeId, ParamId};
use crate::tensor::{DType, Real};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDescription {
    pub version: u32,
    pub dtype: DType,
    pub nodes: Vec<NodeDescription>,
    pub params: Vec<ParamDescription>,
    pub loss: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDescription {
    pub id: NodeId,
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub params: Vec<ParamId>,
    pub shape: Vec<usize>,
    pub checkpoint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDescription {
    pub id: ParamId,
    pub name: String,
    pub node: NodeId,
    pub shape: Vec<usize>,
}

impl<T: Real> Graph<T> {
    pub fn describe(&self) -> GraphDescription {
        GraphDescription {
            version: GRAPH_FORMAT_VERSION,
            dtype: T::DTYPE,
            nodes: self
                .nodes()
                .iter()
                .map(|n| NodeDescription {
                    id: n.id,
                    name: n.name.clone(),
                    op: n.op.clone(),
                    inputs: n.inputs.clone(),
                    params: n.params.clone(),
                    shape: n.shape.clone(),
                    checkpoint: self.is_checkpoint(n.id),
                })
                .collect(),
            params: self
                .params()
                .iter()
                .enumerate()
                .map(|(id, p)| ParamDescription { id, name: p.name.clone(), node: p.node, shape: p.value.shape().to_vec() })
                .collect(),
            loss: self.loss_node(),
        }
    }

    /// Rebuilds the structure with zero parameters; load values separately.
    pub fn from_description(desc: &GraphDescription) -> Result<Self, GraphError> {
        if desc.version != GRAPH_FORMAT_VERSION {
            return Err(GraphError::UnsupportedVersion(desc.version));
        }
        let mut g = Graph::new();
        for n in &desc.nodes {
            let id = g.push(&n.name, n.op.clone(), &n.inputs)?;
            let node = &g.nodes()[id];
            if id != n.id || node.shape != n.shape || node.params != n.params {
                return Err(GraphError::ShapeMismatch { node: n.id, expected: n.shape.clone(), actual: node.shape.clone() });
            }
        }
        let ckpts = desc.nodes.iter().filter(|n| n.checkpoint).map(|n| n.id).collect();
        g.set_checkpoints(ckpts)?;
        Ok(g)
    }
}
