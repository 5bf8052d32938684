//! Execution schedules shared by the executor and the memory planner.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::Graph;
use super::ops::Op;
use super::NodeId;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Compute(NodeId),
    /// Rebuilds a discarded value while processing a backward segment.
    Recompute { node: NodeId, segment: usize },
    Free(NodeId),
    Backward(NodeId),
}

/// `needed[i]` is true for `target` and all of its ancestors.
pub(crate) fn ancestors<T: Real>(graph: &Graph<T>, target: NodeId) -> Vec<bool> {
    let mut needed = vec![false; graph.nodes().len()];
    needed[target] = true;
    for id in (0..=target).rev() {
        if needed[id] {
            for &i in &graph.nodes()[id].inputs {
                needed[i] = true;
            }
        }
    }
    needed
}

fn is_input<T: Real>(graph: &Graph<T>, id: NodeId) -> bool {
    matches!(graph.nodes()[id].op, Op::Input { .. })
}

/// Computes needed nodes in id order. With `discard`, a non-retained value
/// is freed right after its last consumer runs.
pub(crate) fn forward<T: Real>(
    graph: &Graph<T>,
    target: NodeId,
    discard: bool,
    retained: &dyn Fn(NodeId) -> bool,
) -> Vec<Step> {
    let needed = ancestors(graph, target);
    let mut remaining = vec![0usize; graph.nodes().len()];
    for id in 0..=target {
        if needed[id] {
            for &i in &graph.nodes()[id].inputs {
                remaining[i] += 1;
            }
        }
    }
    let mut steps = Vec::new();
    for id in 0..=target {
        if !needed[id] {
            continue;
        }
        steps.push(Step::Compute(id));
        if !discard {
            continue;
        }
        for &i in &graph.nodes()[id].inputs {
            remaining[i] -= 1;
            if remaining[i] == 0 && !retained(i) {
                steps.push(Step::Free(i));
            }
        }
        if remaining[id] == 0 && !retained(id) {
            steps.push(Step::Free(id));
        }
    }
    steps
}

/// Reverse pass over fully retained values; each value is released once its
/// own backward step is done.
pub(crate) fn backward_plain<T: Real>(graph: &Graph<T>, loss: NodeId) -> Vec<Step> {
    let needed = ancestors(graph, loss);
    let mut steps = Vec::new();
    for id in (0..=loss).rev() {
        if !needed[id] {
            continue;
        }
        if graph.nodes()[id].requires_grad {
            steps.push(Step::Backward(id));
        }
        if !is_input(graph, id) {
            steps.push(Step::Free(id));
        }
    }
    steps
}

/// Segment-wise backward pass.
///
/// Retained nodes (checkpoints, inputs, loss) split the id order into
/// segments `(prev, boundary]`. Segments are processed last to first: the
/// discarded values of the segment and any discarded direct inputs from
/// earlier segments are recomputed from retained ancestors, then the segment
/// is backpropagated in descending id order. Backward steps therefore occur
/// in exactly the order of [`backward_plain`], which keeps gradient
/// accumulation order, and so the result, identical.
pub(crate) fn backward_checkpointed<T: Real>(
    graph: &Graph<T>,
    loss: NodeId,
    retained: &dyn Fn(NodeId) -> bool,
) -> Vec<Step> {
    let needed = ancestors(graph, loss);
    let nodes = graph.nodes();
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for id in 0..=loss {
        if needed[id] && retained(id) {
            segments.push((start, id));
            start = id + 1;
        }
    }

    let mut steps = Vec::new();
    for (seg_idx, &(lo, hi)) in segments.iter().enumerate().rev() {
        let in_segment = |id: NodeId| id >= lo && id <= hi && needed[id];
        let mut targets = BTreeSet::new();
        for id in lo..=hi {
            if !in_segment(id) {
                continue;
            }
            if !retained(id) {
                targets.insert(id);
            }
            for &i in &nodes[id].inputs {
                if !retained(i) {
                    targets.insert(i);
                }
            }
        }
        // Discarded ancestors of the targets, back to retained values.
        let mut closure = targets.clone();
        let mut stack: Vec<NodeId> = targets.iter().copied().collect();
        while let Some(id) = stack.pop() {
            for &i in &nodes[id].inputs {
                if !retained(i) && closure.insert(i) {
                    stack.push(i);
                }
            }
        }
        let mut uses = vec![0usize; hi + 1];
        for &id in &closure {
            for &i in &nodes[id].inputs {
                uses[i] += 1;
            }
        }
        for &id in &closure {
            steps.push(Step::Recompute { node: id, segment: seg_idx });
            for &i in &nodes[id].inputs {
                if closure.contains(&i) {
                    uses[i] -= 1;
                    if uses[i] == 0 && !targets.contains(&i) {
                        steps.push(Step::Free(i));
                    }
                }
            }
        }
        for id in (lo..=hi).rev() {
            if !in_segment(id) {
                continue;
            }
            if nodes[id].requires_grad {
                steps.push(Step::Backward(id));
            }
            if !is_input(graph, id) {
                steps.push(Step::Free(id));
            }
        }
        for &id in &targets {
            if !in_segment(id) {
                steps.push(Step::Free(id));
            }
        }
    }
    steps
}
