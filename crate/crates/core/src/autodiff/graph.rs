// SPDX-License-Identifier: Apache-2.0

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    /// Trainable leaf or constant; nothing to propagate.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    BroadcastTo(usize),
    SumTo(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Powf(usize, f64),
    Conv2d(usize, usize),
    ConvKernelGrad(usize, usize),
    KernelFlip(usize),
    Gather(usize, Rc<[usize]>),
    Scatter(usize, Rc<[usize]>),
    Pick(usize, usize),
    Embed(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive operations.
///
/// Nodes are stored in creation order, which is also a valid topological
/// order. A gradient call may itself append nodes (when `create_graph` is
/// set) so the returned gradients can be differentiated again.
#[derive(Debug)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
    generation: Cell<u64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::with_capacity(256)), recording: Cell::new(true), generation: Cell::new(0) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of completed gradient calls on this graph.
    pub fn generation(&self) -> u64 {
        self.generation.get()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// A value that contributes no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// Records an operation result. Nodes that cannot reach a trainable leaf,
    /// or that are created while recording is off, become constants.
    pub(crate) fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires_grad = self.recording.get() && {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_node(value, op, requires_grad)
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    pub(crate) fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to each of
    /// `wrt`. Inputs the loss does not depend on get a zero gradient.
    ///
    /// With `create_graph` the backward pass is itself recorded, so the
    /// returned gradients can be differentiated again. Otherwise they are
    /// constants.
    pub fn gradient<'g>(&'g self, loss: Var<'g>, wrt: &[Var<'g>], create_graph: bool) -> Result<Vec<Var<'g>>> {
        let loss_shape = self.shape_of(loss.id);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar { shape: loss_shape });
        }
        let lo = wrt.iter().map(|v| v.id).min().unwrap_or(loss.id).min(loss.id);
        let mut adjoint: Vec<Option<Var<'g>>> = vec![None; loss.id + 1 - lo];

        let outer_recording = self.recording.get();
        self.recording.set(outer_recording && create_graph);
        let result = (|| {
            if self.nodes.borrow()[loss.id].requires_grad {
                let seed = Tensor::from_parts(loss_shape.clone(), vec![1.0]);
                adjoint[loss.id - lo] = Some(self.constant(seed));
            }
            for id in (lo..=loss.id).rev() {
                let Some(upstream) = adjoint[id - lo] else {
                    continue;
                };
                let op = {
                    let nodes = self.nodes.borrow();
                    if !nodes[id].requires_grad {
                        continue;
                    }
                    nodes[id].op.clone()
                };
                for (input, grad) in self.vjp(id, &op, upstream)? {
                    if input < lo || !self.nodes.borrow()[input].requires_grad {
                        continue;
                    }
                    let slot = &mut adjoint[input - lo];
                    *slot = Some(match *slot {
                        Some(acc) => acc.add(grad)?,
                        None => grad,
                    });
                }
            }
            wrt.iter()
                .map(|v| match adjoint[v.id - lo] {
                    Some(g) => Ok(g),
                    None => Ok(self.constant(Tensor::zeros(self.shape_of(v.id))?)),
                })
                .collect::<Result<Vec<_>>>()
        })();
        self.recording.set(outer_recording);
        self.generation.set(self.generation.get() + 1);
        result
    }

    fn vjp<'g>(&'g self, id: usize, op: &Op, g: Var<'g>) -> Result<Vec<(usize, Var<'g>)>> {
        let v = |i: usize| self.var(i);
        Ok(match op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g), (*b, g)],
            Op::Sub(a, b) => vec![(*a, g), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![(*a, g.mul(v(*b))?), (*b, g.mul(v(*a))?)],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::AddScalar(a) => vec![(*a, g)],
            Op::BroadcastTo(a) => vec![(*a, g.sum_to(&self.shape_of(*a))?)],
            Op::SumTo(a) => vec![(*a, g.broadcast_to(&self.shape_of(*a))?)],
            Op::MatMul(a, b) => vec![(*a, g.matmul(v(*b).transpose()?)?), (*b, v(*a).transpose()?.matmul(g)?)],
            Op::Transpose(a) => vec![(*a, g.transpose()?)],
            Op::Reshape(a) => vec![(*a, g.reshape(&self.shape_of(*a))?)],
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(*a, g.mul(self.constant(mask))?)]
            }
            Op::Exp(a) => vec![(*a, g.mul(v(id))?)],
            Op::Ln(a) => vec![(*a, g.mul(v(*a).powf(-1.0))?)],
            Op::Powf(a, c) => {
                if *c == 1.0 {
                    vec![(*a, g)]
                } else {
                    vec![(*a, g.mul(v(*a).powf(c - 1.0).scale(*c))?)]
                }
            }
            Op::Conv2d(x, w) => vec![
                (*x, g.conv2d(v(*w).kernel_flip_transpose()?)?),
                (*w, v(*x).conv2d_kernel_grad(g, self.shape_of(*w)[2])?),
            ],
            Op::ConvKernelGrad(x, gin) => {
                vec![(*x, v(*gin).conv2d(g.kernel_flip_transpose()?)?), (*gin, v(*x).conv2d(g)?)]
            }
            Op::KernelFlip(a) => vec![(*a, g.kernel_flip_transpose()?)],
            Op::Gather(a, idx) => vec![(*a, g.scatter(idx.clone(), &self.shape_of(*a)))],
            Op::Scatter(a, idx) => vec![(*a, g.gather(idx.clone(), &self.shape_of(*a)))],
            Op::Pick(a, i) => vec![(*a, g.embed(*i, &self.shape_of(*a))?)],
            Op::Embed(a, i) => vec![(*a, g.pick(*i)?)],
        })
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    /// Owned copy of the current value, detached from the graph.
    pub fn tensor(&self) -> Tensor {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.tensor())
    }
}
