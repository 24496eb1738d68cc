//! Eager reverse-mode differentiation.
//!
//! Every operation is evaluated immediately and appended to the graph as a
//! node holding its value, the operation that produced it and whatever the
//! backward rule needs. Nodes are created in execution order, so the reverse
//! of the node list is a valid topological order for the backward sweep and
//! each node is visited once, after all of its consumers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::ops::resample::ResamplePlan;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    ClampMin(Var, T),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute { input: Var, perm: Vec<usize> },
    Expand { input: Var, axis: usize },
    SumAxis { input: Var, axis: usize },
    SumAll(Var),
    MeanAll(Var),
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    LayerNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Resample { input: Var, plan: ResamplePlan<T> },
    Matmul(Var, Var),
    SpatialL2(Var),
    Softmax { input: Var, axis: usize },
    Bce { pred: Var, target: Tensor<T>, eps: T },
    Iou { pred: Var, target: Tensor<T>, inter: Vec<T>, union: Vec<T>, eps: T },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Tensor<T>>,
}

/// Record of executed operations. Single-threaded during construction and
/// backward; the values it produces are plain [`Tensor`]s.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Leaves with `requires_grad` receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Clears all gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Back-propagates from a single-element `loss`, populating the gradient
    /// of every node that requires one. A second call without
    /// [`zero_grad`](Self::zero_grad) is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage("backward already ran on this graph; call zero_grad first".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        use crate::ops::{conv, elementwise as ew, linalg, loss, norm, reduce, resample, shape};
        let node = &self.nodes[i];
        let mut sink = GradSink { nodes: &self.nodes, grads };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => ew::backward_add(self, *a, *b, g, T::one(), &mut sink),
            Op::Sub(a, b) => ew::backward_add(self, *a, *b, g, -T::one(), &mut sink),
            Op::Mul(a, b) => ew::backward_mul(self, *a, *b, g, &mut sink),
            Op::Div(a, b) => ew::backward_div(self, *a, *b, g, &mut sink),
            Op::AddScalar(x) => sink.add(*x, g.clone()),
            Op::MulScalar(x, s) => sink.add(*x, g.map(|v| v * *s)),
            Op::Relu(x) => ew::backward_unary(
                self,
                *x,
                &node.value,
                g,
                |x, _| if x > T::zero() { T::one() } else { T::zero() },
                &mut sink,
            ),
            Op::Sigmoid(x) => ew::backward_unary(self, *x, &node.value, g, |_, y| y * (T::one() - y), &mut sink),
            Op::Exp(x) => ew::backward_unary(self, *x, &node.value, g, |_, y| y, &mut sink),
            Op::Ln(x) => ew::backward_unary(self, *x, &node.value, g, |x, _| T::one() / x, &mut sink),
            Op::Sqrt(x) => ew::backward_unary(self, *x, &node.value, g, |_, y| T::cst(0.5) / y, &mut sink),
            Op::Square(x) => ew::backward_unary(self, *x, &node.value, g, |x, _| x + x, &mut sink),
            Op::ClampMin(x, lo) => ew::backward_unary(
                self,
                *x,
                &node.value,
                g,
                |x, _| if x >= *lo { T::one() } else { T::zero() },
                &mut sink,
            ),
            Op::Conv2d { input, weight, bias, geom } => {
                conv::backward(self, *input, *weight, *bias, *geom, g, &mut sink)
            }
            Op::Concat { inputs, axis } => shape::backward_concat(self, inputs, *axis, g, &mut sink),
            Op::Slice { input, axis, start } => shape::backward_slice(self, *input, *axis, *start, g, &mut sink),
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                sink.add(*x, g.clone().reshaped(&s).expect("reshape grad"))
            }
            Op::Permute { input, perm } => shape::backward_permute(*input, perm, g, &mut sink),
            Op::Expand { input, axis } => shape::backward_expand(*input, *axis, g, &mut sink),
            Op::SumAxis { input, axis } => shape::backward_sum_axis(self, *input, *axis, g, &mut sink),
            Op::SumAll(x) => sink.add(*x, Tensor::full(self.shape(*x), g.item())),
            Op::MeanAll(x) => {
                let n = T::cst(self.value(*x).len() as f64);
                sink.add(*x, Tensor::full(self.shape(*x), g.item() / n))
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
                norm::backward_batchnorm(self, *input, *gamma, *beta, xhat, inv_std, *batch_stats, g, &mut sink)
            }
            Op::LayerNorm { input, gamma, beta, xhat, inv_std } => {
                norm::backward_layernorm(self, *input, *gamma, *beta, xhat, inv_std, g, &mut sink)
            }
            Op::Resample { input, plan } => resample::backward(self, *input, plan, g, &mut sink),
            Op::Matmul(a, b) => linalg::backward_matmul(self, *a, *b, g, &mut sink),
            Op::SpatialL2(x) => reduce::backward_spatial_l2(self, *x, &node.value, g, &mut sink),
            Op::Softmax { input, axis } => reduce::backward_softmax(*input, *axis, &node.value, g, &mut sink),
            Op::Bce { pred, target, eps } => loss::backward_bce(self, *pred, target, *eps, g, &mut sink),
            Op::Iou { pred, target, inter, union, eps } => {
                loss::backward_iou(self, *pred, target, inter, union, *eps, g, &mut sink)
            }
        }
    }
}

/// Accumulates parent gradients during the backward sweep, skipping parents
/// that do not require them.
pub(crate) struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<T: Real> GradSink<'_, T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn add(&mut self, v: Var, g: Tensor<T>) {
        if !self.wants(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape());
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn parents<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => vec![*a, *b],
        Op::AddScalar(x)
        | Op::MulScalar(x, _)
        | Op::Relu(x)
        | Op::Sigmoid(x)
        | Op::Exp(x)
        | Op::Ln(x)
        | Op::Sqrt(x)
        | Op::Square(x)
        | Op::ClampMin(x, _)
        | Op::Reshape(x)
        | Op::SumAll(x)
        | Op::MeanAll(x)
        | Op::SpatialL2(x) => vec![*x],
        Op::Conv2d { input, weight, bias, .. } => {
            let mut v = vec![*input, *weight];
            v.extend(bias.iter().copied());
            v
        }
        Op::Concat { inputs, .. } => inputs.clone(),
        Op::Slice { input, .. }
        | Op::Permute { input, .. }
        | Op::Expand { input, .. }
        | Op::SumAxis { input, .. }
        | Op::Resample { input, .. }
        | Op::Softmax { input, .. } => vec![*input],
        Op::BatchNorm { input, gamma, beta, .. } | Op::LayerNorm { input, gamma, beta, .. } => {
            vec![*input, *gamma, *beta]
        }
        Op::Bce { pred, .. } | Op::Iou { pred, .. } => vec![*pred],
    }
}
