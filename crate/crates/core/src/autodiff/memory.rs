//! Live-memory accounting for node value buffers.
//!
//! Only node values are counted; parameters, gradients and optimizer state
//! are not.

use alloc::collections::BTreeSet;
use alloc::vec;

use super::graph::Graph;
use super::schedule::Step;
use super::{GraphError, NodeId};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemMeter {
    live_bytes: usize,
    peak_bytes: usize,
    live_nodes: usize,
    peak_nodes: usize,
    cap: Option<usize>,
}

impl MemMeter {
    pub fn live(&self) -> usize {
        self.live_bytes
    }

    pub fn peak(&self) -> Peak {
        Peak { bytes: self.peak_bytes, nodes: self.peak_nodes }
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub(crate) fn set_cap(&mut self, cap: Option<usize>) {
        self.cap = cap;
    }

    pub(crate) fn reset(&mut self) {
        *self = MemMeter { cap: self.cap, ..MemMeter::default() };
    }

    pub(crate) fn reset_peak(&mut self) {
        self.peak_bytes = self.live_bytes;
        self.peak_nodes = self.live_nodes;
    }

    pub(crate) fn alloc(&mut self, node: NodeId, bytes: usize) -> Result<(), GraphError> {
        if let Some(cap) = self.cap {
            if self.live_bytes + bytes > cap {
                return Err(GraphError::MemoryCapExceeded { node, requested: bytes, live: self.live_bytes, cap });
            }
        }
        self.live_bytes += bytes;
        self.live_nodes += 1;
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
        self.peak_nodes = self.peak_nodes.max(self.live_nodes);
        Ok(())
    }

    pub(crate) fn free(&mut self, bytes: usize) {
        self.live_bytes -= bytes;
        self.live_nodes -= 1;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Peak {
    pub bytes: usize,
    pub nodes: usize,
}

impl Peak {
    /// Componentwise maximum.
    pub fn max(self, other: Peak) -> Peak {
        Peak { bytes: self.bytes.max(other.bytes), nodes: self.nodes.max(other.nodes) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassPeaks {
    pub forward: Peak,
    pub backward: Peak,
}

impl PassPeaks {
    /// Peak over a whole forward+backward step.
    pub fn step(&self) -> Peak {
        self.forward.max(self.backward)
    }
}

/// Outcome of simulating a training step's schedules on shapes alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryPlan {
    pub peaks: PassPeaks,
    /// Distinct nodes whose values are discarded and rebuilt.
    pub recomputed_nodes: usize,
    /// Total recompute operations (a node may be rebuilt for several segments).
    pub recompute_ops: usize,
}

impl MemoryPlan {
    pub(crate) fn simulate<T: Real>(graph: &Graph<T>, forward: &[Step], backward: &[Step]) -> Self {
        let mut live = vec![false; graph.nodes().len()];
        let mut meter = MemMeter::default();
        let mut recomputed = BTreeSet::new();
        let mut recompute_ops = 0;
        let mut run = |steps: &[Step], meter: &mut MemMeter| {
            for &s in steps {
                match s {
                    Step::Compute(id) | Step::Recompute { node: id, .. } => {
                        if let Step::Recompute { .. } = s {
                            recomputed.insert(id);
                            recompute_ops += 1;
                        }
                        if !live[id] {
                            live[id] = true;
                            let _ = meter.alloc(id, graph.nodes()[id].value_bytes::<T>());
                        }
                    }
                    Step::Free(id) => {
                        if live[id] {
                            live[id] = false;
                            meter.free(graph.nodes()[id].value_bytes::<T>());
                        }
                    }
                    Step::Backward(_) => {}
                }
            }
        };
        run(forward, &mut meter);
        let fwd = meter.peak();
        meter.reset_peak();
        run(backward, &mut meter);
        let bwd = meter.peak();
        MemoryPlan {
            peaks: PassPeaks { forward: fwd, backward: bwd },
            recomputed_nodes: recomputed.len(),
            recompute_ops,
        }
    }
}
