use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::memory::{MemMeter, MemoryPlan, PassPeaks};
use super::ops::{self, Op};
use super::schedule::{self, Step};
use super::{GradientMap, GraphError, NodeId, ParamId};
use crate::tensor::{numel, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub params: Vec<ParamId>,
    /// Output shape, fixed at construction.
    pub shape: Vec<usize>,
    /// Whether any learnable parameter lies upstream of (or on) this node.
    pub requires_grad: bool,
}

impl Node {
    pub fn value_bytes<T: Real>(&self) -> usize {
        numel(&self.shape) * T::BYTES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub node: NodeId,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ForwardState {
    target: NodeId,
    discard: bool,
}

/// A computation graph with per-node values, a checkpoint set and a
/// live-memory meter.
///
/// Nodes are appended through the builder methods, so node ids are a
/// topological order and the graph is acyclic by construction.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    values: Vec<Option<Tensor<T>>>,
    consumers: Vec<Vec<NodeId>>,
    checkpoints: BTreeSet<NodeId>,
    loss: Option<NodeId>,
    meter: MemMeter,
    peaks: PassPeaks,
    last_forward: Option<ForwardState>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            values: Vec::new(),
            consumers: Vec::new(),
            checkpoints: BTreeSet::new(),
            loss: None,
            meter: MemMeter::default(),
            peaks: PassPeaks::default(),
            last_forward: None,
        }
    }

    /// Appends a node, validating its shape rule. Parameters are created
    /// zero-filled; see [`Graph::init_params`].
    pub fn push(&mut self, name: &str, op: Op, inputs: &[NodeId]) -> Result<NodeId, GraphError> {
        let id = self.nodes.len();
        for &i in inputs {
            if i >= id {
                return Err(GraphError::UnknownNode(i));
            }
        }
        let shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.nodes[i].shape.as_slice()).collect();
        let shape = op
            .output_shape(&shapes)
            .map_err(|f| GraphError::ShapeMismatch { node: id, expected: f.expected, actual: f.actual })?;
        let mut param_ids = Vec::new();
        for (k, pshape) in op.param_shapes().into_iter().enumerate() {
            param_ids.push(self.params.len());
            let suffix = match (&op, k) {
                (Op::BatchNorm { .. }, 0) => "gamma",
                (Op::BatchNorm { .. }, _) => "beta",
                (_, 0) => "weight",
                _ => "bias",
            };
            let mut pname = name.to_string();
            pname.push('.');
            pname.push_str(suffix);
            self.params.push(Param { name: pname, node: id, value: Tensor::zeros(&pshape) });
        }
        let requires_grad = !param_ids.is_empty() || inputs.iter().any(|&i| self.nodes[i].requires_grad);
        for &i in inputs {
            if !self.consumers[i].contains(&id) {
                self.consumers[i].push(id);
            }
        }
        self.nodes.push(Node {
            id,
            name: name.to_string(),
            op,
            inputs: inputs.to_vec(),
            params: param_ids,
            shape,
            requires_grad,
        });
        self.values.push(None);
        self.consumers.push(Vec::new());
        if matches!(self.nodes[id].op, Op::L2Loss) {
            self.loss = Some(id);
        }
        Ok(id)
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, GraphError> {
        self.push(name, Op::Input { name: name.to_string(), shape: shape.to_vec() }, &[])
    }

    pub fn conv3d(&mut self, name: &str, x: NodeId, out_channels: usize, kernel: usize, padding: usize) -> Result<NodeId, GraphError> {
        let in_channels = self.channels_of(x)?;
        self.push(name, Op::Conv3d { in_channels, out_channels, kernel, padding }, &[x])
    }

    pub fn deconv3d(&mut self, name: &str, x: NodeId, out_channels: usize) -> Result<NodeId, GraphError> {
        let in_channels = self.channels_of(x)?;
        self.push(name, Op::Deconv3d { in_channels, out_channels }, &[x])
    }

    pub fn max_pool3d(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(name, Op::MaxPool3d, &[x])
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        let channels = self.channels_of(x)?;
        self.push(name, Op::BatchNorm { channels, eps: 1e-5 }, &[x])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(name, Op::Relu, &[x])
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId, GraphError> {
        self.push(name, Op::Concat, xs)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(name, Op::Add, &[a, b])
    }

    /// Appends the loss node; a graph has at most one.
    pub fn l2_loss(&mut self, name: &str, pred: NodeId, target: NodeId) -> Result<NodeId, GraphError> {
        self.push(name, Op::L2Loss, &[pred, target])
    }

    fn channels_of(&self, x: NodeId) -> Result<usize, GraphError> {
        let node = self.nodes.get(x).ok_or(GraphError::UnknownNode(x))?;
        node.shape.first().copied().ok_or(GraphError::ShapeMismatch {
            node: self.nodes.len(),
            expected: vec![1, 1, 1, 1],
            actual: node.shape.clone(),
        })
    }

    /// He-normal convolution weights, zero biases, unit gamma, zero beta.
    /// Parameters are visited in id order so a seed fixes every value.
    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for p in &mut self.params {
            let node = &self.nodes[p.node];
            let is_weight = p.name.ends_with(".weight");
            let fill = match (&node.op, is_weight) {
                (Op::Conv3d { in_channels, kernel, .. }, true) => Some((*in_channels * kernel * kernel * kernel) as f64),
                (Op::Deconv3d { in_channels, .. }, true) => Some((*in_channels * 8) as f64),
                (Op::BatchNorm { .. }, _) if p.name.ends_with(".gamma") => {
                    p.value.data_mut().iter_mut().for_each(|v| *v = T::one());
                    None
                }
                _ => {
                    p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
                    None
                }
            };
            if let Some(fan_in) = fill {
                let std = num_traits::Float::sqrt(2.0 / fan_in);
                for v in p.value.data_mut() {
                    let n: f64 = StandardNormal.sample(rng);
                    *v = T::from_f64(n * std);
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Consumers of `id` in ascending order (each listed once).
    pub fn consumers(&self, id: NodeId) -> &[NodeId] {
        &self.consumers[id]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn loss_node(&self) -> Option<NodeId> {
        self.loss
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Current value of a node; `None` if never computed or discarded.
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.values.get(id).and_then(|v| v.as_ref())
    }

    pub fn is_checkpoint(&self, id: NodeId) -> bool {
        self.checkpoints.contains(&id)
    }

    pub fn checkpoints(&self) -> &BTreeSet<NodeId> {
        &self.checkpoints
    }

    pub fn set_checkpoints(&mut self, set: BTreeSet<NodeId>) -> Result<(), GraphError> {
        if let Some(&bad) = set.iter().find(|&&id| id >= self.nodes.len()) {
            return Err(GraphError::UnknownNode(bad));
        }
        self.checkpoints = set;
        Ok(())
    }

    pub fn set_memory_cap(&mut self, cap: Option<usize>) {
        self.meter.set_cap(cap);
    }

    pub fn meter(&self) -> &MemMeter {
        &self.meter
    }

    /// Peaks recorded by the most recent forward and backward passes.
    pub fn peaks(&self) -> PassPeaks {
        self.peaks
    }

    /// Runs one primitive on explicit input values, validating shapes
    /// against the node's declared inputs.
    pub fn primitive_forward(&self, id: NodeId, input_values: &[&Tensor<T>]) -> Result<Tensor<T>, GraphError> {
        let node = self.nodes.get(id).ok_or(GraphError::UnknownNode(id))?;
        if matches!(node.op, Op::Input { .. }) {
            return Err(GraphError::ShapeMismatch { node: id, expected: vec![0], actual: vec![input_values.len()] });
        }
        if input_values.len() != node.inputs.len() {
            return Err(GraphError::ShapeMismatch {
                node: id,
                expected: vec![node.inputs.len()],
                actual: vec![input_values.len()],
            });
        }
        for (&i, v) in node.inputs.iter().zip(input_values) {
            if v.shape() != self.nodes[i].shape.as_slice() {
                return Err(GraphError::ShapeMismatch {
                    node: id,
                    expected: self.nodes[i].shape.clone(),
                    actual: v.shape().to_vec(),
                });
            }
        }
        let params: Vec<&Tensor<T>> = node.params.iter().map(|&p| &self.params[p].value).collect();
        Ok(ops::forward(&node.op, input_values, &params))
    }

    fn is_retained(&self, id: NodeId, target: NodeId) -> bool {
        id == target || matches!(self.nodes[id].op, Op::Input { .. }) || self.checkpoints.contains(&id)
    }

    fn clear_values(&mut self) {
        for v in &mut self.values {
            *v = None;
        }
        self.meter.reset();
        self.last_forward = None;
    }

    /// Forward pass to the loss node. With `discard`, only checkpoint nodes
    /// (plus inputs and the loss) keep their values once their consumers
    /// have run. Returns the loss.
    pub fn forward(&mut self, inputs: &[(&str, &Tensor<T>)], discard: bool) -> Result<T, GraphError> {
        let loss = self.loss.ok_or(GraphError::NoLoss)?;
        self.forward_to(loss, inputs, discard)?;
        Ok(self.values[loss].as_ref().expect("loss retained").data()[0])
    }

    /// Forward pass restricted to the ancestors of `target`.
    pub fn forward_to(&mut self, target: NodeId, inputs: &[(&str, &Tensor<T>)], discard: bool) -> Result<(), GraphError> {
        if target >= self.nodes.len() {
            return Err(GraphError::UnknownNode(target));
        }
        for (name, _) in inputs {
            if !self.nodes.iter().any(|n| matches!(&n.op, Op::Input { name: m, .. } if m == name)) {
                return Err(GraphError::UnknownInput(name.to_string()));
            }
        }
        self.clear_values();
        let steps = schedule::forward(self, target, discard, &|id| self.is_retained(id, target));
        self.execute(&steps, inputs, None)?;
        self.peaks.forward = self.meter.peak();
        self.last_forward = Some(ForwardState { target, discard });
        Ok(())
    }

    /// Evaluates `target` with minimal retention and returns its value.
    /// All node values are released afterwards.
    pub fn evaluate(&mut self, target: NodeId, inputs: &[(&str, &Tensor<T>)]) -> Result<Tensor<T>, GraphError> {
        let saved = core::mem::take(&mut self.checkpoints);
        let result = self.forward_to(target, inputs, true);
        self.checkpoints = saved;
        result?;
        let out = self.values[target].take().expect("target retained");
        self.clear_values();
        Ok(out)
    }

    /// Standard reverse-mode pass; needs a preceding `forward(.., false)`.
    pub fn backward_plain(&mut self) -> Result<GradientMap<T>, GraphError> {
        let state = self.backward_state(false)?;
        let steps = schedule::backward_plain(self, state.target);
        self.run_backward(&steps, state.target)
    }

    /// Segment-wise recompute-then-backpropagate pass; needs a preceding
    /// `forward(.., true)`. Bitwise equal to [`Graph::backward_plain`].
    pub fn backward_checkpointed(&mut self) -> Result<GradientMap<T>, GraphError> {
        let state = self.backward_state(true)?;
        let steps = schedule::backward_checkpointed(self, state.target, &|id| self.is_retained(id, state.target));
        self.run_backward(&steps, state.target)
    }

    /// Dispatches on how the last forward pass was run.
    pub fn backward(&mut self) -> Result<GradientMap<T>, GraphError> {
        match self.last_forward {
            Some(ForwardState { discard: true, .. }) => self.backward_checkpointed(),
            _ => self.backward_plain(),
        }
    }

    fn backward_state(&self, discard: bool) -> Result<ForwardState, GraphError> {
        let loss = self.loss.ok_or(GraphError::NoLoss)?;
        match self.last_forward {
            Some(s) if s.target == loss && s.discard == discard => Ok(s),
            Some(s) if s.target == loss => Err(GraphError::ForwardModeMismatch { expected_discard: discard }),
            _ => Err(GraphError::MissingValue { node: loss }),
        }
    }

    fn run_backward(&mut self, steps: &[Step], loss: NodeId) -> Result<GradientMap<T>, GraphError> {
        self.meter.reset_peak();
        let mut grads = BackwardState {
            node_grads: vec![None; self.nodes.len()],
            params: GradientMap::new(),
        };
        if self.nodes[loss].requires_grad {
            grads.node_grads[loss] = Some(Tensor::scalar(T::one()));
        }
        self.execute(steps, &[], Some(&mut grads))?;
        self.peaks.backward = self.meter.peak();
        self.last_forward = None;
        Ok(grads.params)
    }

    /// Predicts forward and backward peaks without computing anything, by
    /// walking the same schedules the executor runs.
    pub fn memory_plan(&self, discard: bool) -> Result<MemoryPlan, GraphError> {
        let loss = self.loss.ok_or(GraphError::NoLoss)?;
        let retained = |id| self.is_retained(id, loss);
        let fwd = schedule::forward(self, loss, discard, &retained);
        let bwd = if discard {
            schedule::backward_checkpointed(self, loss, &retained)
        } else {
            schedule::backward_plain(self, loss)
        };
        Ok(MemoryPlan::simulate(self, &fwd, &bwd))
    }

    fn execute(
        &mut self,
        steps: &[Step],
        inputs: &[(&str, &Tensor<T>)],
        mut grads: Option<&mut BackwardState<T>>,
    ) -> Result<(), GraphError> {
        for &step in steps {
            match step {
                Step::Compute(id) => self.compute(id, inputs, None)?,
                Step::Recompute { node, segment } => self.compute(node, inputs, Some(segment))?,
                Step::Free(id) => {
                    if let Some(v) = self.values[id].take() {
                        self.meter.free(v.bytes());
                    }
                }
                Step::Backward(id) => {
                    let state = grads.as_deref_mut().expect("backward step outside backward pass");
                    self.backward_node(id, state)?;
                }
            }
        }
        Ok(())
    }

    fn compute(&mut self, id: NodeId, inputs: &[(&str, &Tensor<T>)], segment: Option<usize>) -> Result<(), GraphError> {
        let node = &self.nodes[id];
        let value = if let Op::Input { name, shape } = &node.op {
            let bound = inputs
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| GraphError::MissingInput(name.clone()))?;
            if bound.shape() != shape.as_slice() {
                return Err(GraphError::ShapeMismatch { node: id, expected: shape.clone(), actual: bound.shape().to_vec() });
            }
            bound.clone()
        } else {
            let mut ins = Vec::with_capacity(node.inputs.len());
            for &i in &node.inputs {
                match self.values[i].as_ref() {
                    Some(v) => ins.push(v),
                    None => {
                        return Err(match segment {
                            Some(segment) => GraphError::DiscardedCheckpoint { segment, node: i },
                            None => GraphError::MissingValue { node: i },
                        })
                    }
                }
            }
            let params: Vec<&Tensor<T>> = node.params.iter().map(|&p| &self.params[p].value).collect();
            ops::forward(&node.op, &ins, &params)
        };
        if !value.all_finite() {
            return Err(GraphError::NonFinite { node: id, kind: node.op.kind() });
        }
        self.meter.alloc(id, value.bytes())?;
        self.values[id] = Some(value);
        Ok(())
    }

    fn backward_node(&mut self, id: NodeId, state: &mut BackwardState<T>) -> Result<(), GraphError> {
        let Some(grad_out) = state.node_grads[id].take() else {
            return Ok(());
        };
        let node = &self.nodes[id];
        let mut ins = Vec::with_capacity(node.inputs.len());
        for &i in &node.inputs {
            ins.push(self.values[i].as_ref().ok_or(GraphError::MissingValue { node: i })?);
        }
        let need: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
        let params: Vec<&Tensor<T>> = node.params.iter().map(|&p| &self.params[p].value).collect();
        let out = ops::backward(&node.op, &ins, &params, &grad_out, &need);
        for (&i, g) in node.inputs.iter().zip(out.inputs) {
            if let Some(g) = g {
                match state.node_grads[i].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => state.node_grads[i] = Some(g),
                }
            }
        }
        for (&p, g) in node.params.iter().zip(out.params) {
            state.params.insert(p, g);
        }
        Ok(())
    }
}

struct BackwardState<T> {
    node_grads: Vec<Option<Tensor<T>>>,
    params: GradientMap<T>,
}
