//! Reverse-mode automatic differentiation on a single-use tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, so parents always precede children. [`Graph::backward`]
//! walks that order in reverse once and returns a [`Gradients`] map holding
//! one entry per trainable leaf. One graph serves one training step and is
//! dropped afterwards; it is not `Sync` and stays on the thread that built it.

mod gradcheck;
mod kernels;

pub use gradcheck::{finite_diff_check, DEFAULT_STEP};

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use kernels::{ConvDims, PoolDims};

/// Lower clamp applied to `sqrt` and `log` inputs.
pub const CLAMP_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Square,
    /// `sqrt(max(x, 1e-12))`
    Sqrt,
    /// `ln(max(x, 1e-12))`
    Log,
    /// Subgradient 0 at 0.
    Abs,
    Relu,
    Sigmoid,
    Neg,
    /// `max(x, bound)`; gradient 0 where the bound is active.
    ClampMin(f64),
    /// Pushes magnitudes below the bound out to it, keeping the sign
    /// (zero maps to `+bound`). Gradient is 0 inside the clamped band.
    ClampAbsMin(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(BinaryOp, usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Unary(UnaryOp, usize),
    MatMul(usize, usize),
    Reduce(ReduceOp, usize, Option<usize>),
    Reshape(usize),
    Transpose(usize),
    Concat(Vec<usize>),
    Conv2d(usize, usize),
    AvgPool2d(usize, (usize, usize)),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf: gets an entry in the gradient map.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// A non-trainable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Elementwise `a ∘ b`. `b` must have `a`'s shape or hold a single
    /// value, which is broadcast.
    pub fn elementwise<'g>(&'g self, op: BinaryOp, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let (x, y) = (self.value_of(a.id), self.value_of(b.id));
            let broadcast = x.shape() != y.shape();
            if broadcast && y.numel() != 1 {
                return Err(Error::dim(format!(
                    "{op:?}: shapes {:?} and {:?} do not match",
                    x.shape(),
                    y.shape()
                )));
            }
            let f = match op {
                BinaryOp::Add => |p: f64, q: f64| p + q,
                BinaryOp::Sub => |p: f64, q: f64| p - q,
                BinaryOp::Mul => |p: f64, q: f64| p * q,
                BinaryOp::Div => |p: f64, q: f64| p / q,
            };
            let data = if broadcast {
                let q = y.data()[0];
                x.data().iter().map(|&p| f(p, q)).collect()
            } else {
                x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect()
            };
            Tensor::new(x.shape().to_vec(), data)?
        };
        let rg = self.needs_grad(&[a.id, b.id]);
        Ok(self.push(Op::Binary(op, a.id, b.id), value, rg))
    }

    /// Flattens and joins the inputs into one vector.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of nothing".into()));
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let data: Vec<f64> = ids.iter().flat_map(|&i| self.value_of(i).data().to_vec()).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(Op::Concat(ids), Tensor::vector(data), rg))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    ///
    /// Every trainable leaf gets an entry, zero if `loss` does not depend on it.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (parent, pg) in local_grads(&nodes, node, &g) {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut map = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let shape = node.value.shape().to_vec();
                let data = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                map.insert(id, Tensor::new(shape, data)?);
            }
        }
        Ok(Gradients { map })
    }
}

/// Gradient contributions of one node to each of its parents.
fn local_grads(nodes: &[Node], node: &Node, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Binary(op, a, b) => {
            let (x, y) = (val(*a).data(), val(*b).data());
            let broadcast = val(*a).shape() != val(*b).shape();
            let yv = |i: usize| if broadcast { y[0] } else { y[i] };
            let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                BinaryOp::Add => (g.to_vec(), g.to_vec()),
                BinaryOp::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                BinaryOp::Mul => (
                    g.iter().enumerate().map(|(i, gi)| gi * yv(i)).collect(),
                    g.iter().zip(x).map(|(gi, xi)| gi * xi).collect(),
                ),
                BinaryOp::Div => (
                    g.iter().enumerate().map(|(i, gi)| gi / yv(i)).collect(),
                    g.iter()
                        .zip(x)
                        .enumerate()
                        .map(|(i, (gi, xi))| -gi * xi / (yv(i) * yv(i)))
                        .collect(),
                ),
            };
            let gb = if broadcast { vec![gb.iter().sum()] } else { gb };
            vec![(*a, ga), (*b, gb)]
        }
        Op::AddScalar(a) => vec![(*a, g.to_vec())],
        Op::MulScalar(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
        Op::Unary(op, a) => {
            let x = val(*a).data();
            let y = node.value.data();
            let d: Vec<f64> = g
                .iter()
                .zip(x.iter().zip(y))
                .map(|(&gi, (&xi, &yi))| gi * unary_derivative(*op, xi, yi))
                .collect();
            vec![(*a, d)]
        }
        Op::MatMul(a, b) => {
            let (x, y) = (val(*a), val(*b));
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            vec![
                (*a, kernels::matmul_nt(g, y.data(), m, k, n)),
                (*b, kernels::matmul_tn(x.data(), g, m, k, n)),
            ]
        }
        Op::Reduce(op, a, axis) => {
            let x = val(*a);
            let (outer, len, inner) = match axis {
                Some(ax) => kernels::axis_split(x.shape(), *ax),
                None => (1, x.numel(), 1),
            };
            let scale = match op {
                ReduceOp::Sum => 1.0,
                ReduceOp::Mean => 1.0 / len as f64,
            };
            vec![(*a, kernels::expand_axis(g, outer, len, inner, scale))]
        }
        Op::Reshape(a) => vec![(*a, g.to_vec())],
        Op::Transpose(a) => {
            let s = val(*a).shape();
            // g has the transposed shape [cols, rows]
            vec![(*a, kernels::transpose(g, s[1], s[0]))]
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let n = val(p).numel();
                    let slice = g[offset..offset + n].to_vec();
                    offset += n;
                    (p, slice)
                })
                .collect()
        }
        Op::Conv2d(input, kernel) => {
            let dims = conv_dims(val(*input).shape(), val(*kernel).shape());
            let (gi, gk) = kernels::conv2d_backward(g, val(*input).data(), val(*kernel).data(), dims);
            vec![(*input, gi), (*kernel, gk)]
        }
        Op::AvgPool2d(input, window) => {
            let dims = pool_dims(val(*input).shape(), *window);
            vec![(*input, kernels::avg_pool2d_backward(g, dims))]
        }
    }
}

fn unary_forward(op: UnaryOp, x: f64) -> f64 {
    match op {
        UnaryOp::Square => x * x,
        UnaryOp::Sqrt => x.max(CLAMP_MIN).sqrt(),
        UnaryOp::Log => x.max(CLAMP_MIN).ln(),
        UnaryOp::Abs => x.abs(),
        UnaryOp::Relu => x.max(0.0),
        UnaryOp::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        UnaryOp::Neg => -x,
        UnaryOp::ClampMin(m) => x.max(m),
        UnaryOp::ClampAbsMin(m) => {
            if x.abs() >= m {
                x
            } else if x < 0.0 {
                -m
            } else {
                m
            }
        }
    }
}

/// dy/dx given input `x` and output `y`.
fn unary_derivative(op: UnaryOp, x: f64, y: f64) -> f64 {
    match op {
        UnaryOp::Square => 2.0 * x,
        UnaryOp::Sqrt if x > CLAMP_MIN => 0.5 / y,
        UnaryOp::Log if x > CLAMP_MIN => 1.0 / x,
        UnaryOp::Sqrt | UnaryOp::Log => 0.0,
        UnaryOp::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryOp::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryOp::Sigmoid => y * (1.0 - y),
        UnaryOp::Neg => -1.0,
        UnaryOp::ClampMin(m) => {
            if x >= m {
                1.0
            } else {
                0.0
            }
        }
        UnaryOp::ClampAbsMin(m) => {
            if x.abs() >= m {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn conv_dims(input: &[usize], kernel: &[usize]) -> ConvDims {
    ConvDims {
        batch: input[0],
        in_ch: input[1],
        out_ch: kernel[0],
        height: input[2],
        width: input[3],
        kh: kernel[2],
        kw: kernel[3],
    }
}

fn pool_dims(input: &[usize], (wh, ww): (usize, usize)) -> PoolDims {
    PoolDims {
        planes: input[0] * input[1],
        height: input[2],
        width: input[3],
        wh,
        ww,
    }
}

#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value_of(self.id).shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.graph.value_of(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs_grad(&[self.id])
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.elementwise(BinaryOp::Add, self, rhs)
    }

    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.elementwise(BinaryOp::Sub, self, rhs)
    }

    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.elementwise(BinaryOp::Mul, self, rhs)
    }

    pub fn div(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.elementwise(BinaryOp::Div, self, rhs)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let value = self.graph.value_of(self.id).map(|v| v + c);
        let rg = self.requires_grad();
        self.graph.push(Op::AddScalar(self.id), value, rg)
    }

    pub fn mul_scalar(self, c: f64) -> Var<'g> {
        let value = self.graph.value_of(self.id).map(|v| v * c);
        let rg = self.requires_grad();
        self.graph.push(Op::MulScalar(self.id, c), value, rg)
    }

    /// `c - self`
    pub fn rsub_scalar(self, c: f64) -> Var<'g> {
        self.neg().add_scalar(c)
    }

    pub fn unary(self, op: UnaryOp) -> Var<'g> {
        let value = self.graph.value_of(self.id).map(|v| unary_forward(op, v));
        let rg = self.requires_grad();
        self.graph.push(Op::Unary(op, self.id), value, rg)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(UnaryOp::Square)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn log(self) -> Var<'g> {
        self.unary(UnaryOp::Log)
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(UnaryOp::Abs)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(UnaryOp::Relu)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn neg(self) -> Var<'g> {
        self.unary(UnaryOp::Neg)
    }

    pub fn clamp_min(self, bound: f64) -> Var<'g> {
        self.unary(UnaryOp::ClampMin(bound))
    }

    pub fn clamp_abs_min(self, bound: f64) -> Var<'g> {
        self.unary(UnaryOp::ClampAbsMin(bound))
    }

    /// Copy of the current value that blocks gradient flow.
    pub fn detach(self) -> Var<'g> {
        self.graph.constant(self.value())
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let (a, b) = (self.graph.value_of(self.id), self.graph.value_of(rhs.id));
            if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::dim(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))?
        };
        let rg = self.graph.needs_grad(&[self.id, rhs.id]);
        Ok(self.graph.push(Op::MatMul(self.id, rhs.id), value, rg))
    }

    /// Sum or mean over one axis (removed from the shape), or over all
    /// entries when `axis` is `None` (result is a scalar).
    pub fn reduce(self, op: ReduceOp, axis: Option<usize>) -> Result<Var<'g>> {
        let value = {
            let x = self.graph.value_of(self.id);
            let (outer, len, inner, shape) = match axis {
                Some(ax) if ax < x.ndim() => {
                    let (o, l, i) = kernels::axis_split(x.shape(), ax);
                    let mut s = x.shape().to_vec();
                    s.remove(ax);
                    (o, l, i, s)
                }
                Some(ax) => return Err(Error::dim(format!("axis {ax} out of range for shape {:?}", x.shape()))),
                None => (1, x.numel(), 1, Vec::new()),
            };
            let mut data = kernels::sum_axis(x.data(), outer, len, inner);
            if op == ReduceOp::Mean {
                data.iter_mut().for_each(|v| *v /= len as f64);
            }
            Tensor::new(shape, data)?
        };
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::Reduce(op, self.id, axis), value, rg))
    }

    pub fn sum(self) -> Var<'g> {
        self.reduce(ReduceOp::Sum, None).expect("full reduction")
    }

    pub fn mean(self) -> Var<'g> {
        self.reduce(ReduceOp::Mean, None).expect("full reduction")
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        self.reduce(ReduceOp::Sum, Some(axis))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        self.reduce(ReduceOp::Mean, Some(axis))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.value().reshape(shape.to_vec())?;
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::Reshape(self.id), value, rg))
    }

    /// Matrix transpose.
    pub fn t(self) -> Result<Var<'g>> {
        let value = {
            let x = self.graph.value_of(self.id);
            if x.ndim() != 2 {
                return Err(Error::dim(format!("transpose of shape {:?}", x.shape())));
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            Tensor::new(vec![c, r], kernels::transpose(x.data(), r, c))?
        };
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::Transpose(self.id), value, rg))
    }

    /// Stride-1, zero same-padded convolution of a `B×C×H×W` input with an
    /// `O×C×kH×kW` kernel (odd kernel extents).
    pub fn conv2d(self, kernel: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let (x, k) = (self.graph.value_of(self.id), self.graph.value_of(kernel.id));
            if x.ndim() != 4 || k.ndim() != 4 {
                return Err(Error::dim(format!(
                    "conv2d expects 4-D input and kernel, got {:?} and {:?}",
                    x.shape(),
                    k.shape()
                )));
            }
            if x.shape()[1] != k.shape()[1] {
                return Err(Error::dim(format!(
                    "conv2d channel mismatch: input {:?}, kernel {:?}",
                    x.shape(),
                    k.shape()
                )));
            }
            if k.shape()[2] % 2 == 0 || k.shape()[3] % 2 == 0 {
                return Err(Error::dim(format!(
                    "conv2d kernel extents must be odd, got {:?}",
                    k.shape()
                )));
            }
            let d = conv_dims(x.shape(), k.shape());
            Tensor::new(
                vec![d.batch, d.out_ch, d.height, d.width],
                kernels::conv2d(x.data(), k.data(), d),
            )?
        };
        let rg = self.graph.needs_grad(&[self.id, kernel.id]);
        Ok(self.graph.push(Op::Conv2d(self.id, kernel.id), value, rg))
    }

    /// Non-overlapping window means over the last two axes of a 4-D tensor.
    pub fn avg_pool2d(self, window: (usize, usize)) -> Result<Var<'g>> {
        let value = {
            let x = self.graph.value_of(self.id);
            if x.ndim() != 4 || window.0 == 0 || window.1 == 0 {
                return Err(Error::dim(format!("avg_pool2d {window:?} on shape {:?}", x.shape())));
            }
            let d = pool_dims(x.shape(), window);
            if d.out_h() == 0 || d.out_w() == 0 {
                return Err(Error::dim(format!(
                    "pool window {window:?} larger than {:?}",
                    x.shape()
                )));
            }
            Tensor::new(
                vec![x.shape()[0], x.shape()[1], d.out_h(), d.out_w()],
                kernels::avg_pool2d(x.data(), d),
            )?
        };
        let rg = self.requires_grad();
        Ok(self.graph.push(Op::AvgPool2d(self.id, window), value, rg))
    }
}

/// Gradients of one backward sweep, keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    map: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.map.get(&var.id)
    }

    /// Gradient of a trainable leaf.
    ///
    /// Panics if `var` is not a trainable leaf of the graph that produced
    /// these gradients.
    pub fn wrt(&self, var: Var<'_>) -> &Tensor {
        self.get(var).expect("gradient requested for a non-trainable node")
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec())
    }

    #[test]
    fn add_and_scalar_ops() {
        let g = Graph::new();
        let a = g.constant(vec_t(&[1.0, 2.0]));
        let b = g.constant(vec_t(&[3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
        let zero = g.scalar(0.0);
        assert_eq!(
            g.constant(vec_t(&[2.0, 3.0])).mul(zero).unwrap().value().data(),
            &[0.0, 0.0]
        );
        let q = g.constant(vec_t(&[1.0])).div(zero).unwrap();
        assert!(!q.value().is_finite());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let g = Graph::new();
        let a = g.constant(vec_t(&[1.0, 2.0]));
        let b = g.constant(vec_t(&[1.0, 2.0, 3.0]));
        assert!(matches!(a.add(b), Err(Error::Dimension(_))));
        let m = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(m.matmul(m), Err(Error::Dimension(_))));
        assert!(matches!(m.sum_axis(2), Err(Error::Dimension(_))));
    }

    #[test]
    fn unary_values_and_grads() {
        let g = Graph::new();
        let x = g.leaf(vec_t(&[3.0]));
        let y = x.square();
        assert_eq!(y.item(), 9.0);
        let grads = g.backward(y.sum()).unwrap();
        assert_eq!(grads.wrt(x).data(), &[6.0]);

        let g = Graph::new();
        let r = g.constant(vec_t(&[-1.0, 2.0])).relu();
        assert_eq!(r.value().data(), &[0.0, 2.0]);

        let g = Graph::new();
        let z = g.leaf(vec_t(&[0.0]));
        let a = z.abs();
        assert_eq!(a.item(), 0.0);
        assert_eq!(g.backward(a.sum()).unwrap().wrt(z).data(), &[0.0]);
    }

    #[test]
    fn sqrt_and_log_are_clamped() {
        let g = Graph::new();
        let x = g.leaf(vec_t(&[0.0, -1.0]));
        let s = x.sqrt();
        assert_eq!(s.value().data(), &[1e-6, 1e-6]);
        let l = x.log();
        assert!(l.value().is_finite());
        let grads = g.backward(s.add(l).unwrap().sum()).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn clamp_abs_min_keeps_sign() {
        let g = Graph::new();
        let c = g.constant(vec_t(&[0.0, -1e-9, 2e-9, 0.5])).clamp_abs_min(1e-6);
        assert_eq!(c.value().data(), &[1e-6, -1e-6, 1e-6, 0.5]);
    }

    #[test]
    fn matmul_identity_and_dot() {
        let g = Graph::new();
        let i = g.constant(Tensor::identity(2));
        let m = g.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        assert_eq!(i.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = g.constant(Tensor::matrix(&[vec![1.0, 2.0]]).unwrap());
        let c = g.constant(Tensor::matrix(&[vec![3.0], vec![4.0]]).unwrap());
        let p = r.matmul(c).unwrap();
        assert_eq!(p.shape(), vec![1, 1]);
        assert_eq!(p.item(), 11.0);
    }

    #[test]
    fn reductions() {
        let g = Graph::new();
        assert_eq!(g.constant(vec_t(&[1.0, 2.0, 3.0])).sum().item(), 6.0);
        let m = g.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let col = m.mean_axis(0).unwrap();
        assert_eq!(col.shape(), vec![2]);
        assert_eq!(col.value().data(), &[2.0, 3.0]);
        assert_eq!(m.sum_axis(1).unwrap().value().data(), &[3.0, 7.0]);

        let g = Graph::new();
        let x = g.leaf(vec_t(&[5.0, -1.0, 2.0, 7.0]));
        let grads = g.backward(x.mean()).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.25; 4]);
    }

    #[test]
    fn conv_identity_and_box_filter() {
        let g = Graph::new();
        let input = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let x = g.constant(input.clone());
        let one = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        assert_eq!(x.conv2d(one).unwrap().value(), input);

        let c = g.constant(Tensor::full(&[1, 1, 5, 5], 2.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = c.conv2d(k).unwrap().value();
        for yy in 1..4 {
            for xx in 1..4 {
                assert_eq!(y.data()[yy * 5 + xx], 18.0);
            }
        }
        // corner sees 4 taps
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn conv_channel_mismatch() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(x.conv2d(k), Err(Error::Dimension(_))));
    }

    #[test]
    fn avg_pool_values_and_grad() {
        let g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = x.avg_pool2d((2, 2)).unwrap();
        assert_eq!(p.value().data(), &[2.5]);
        let grads = g.backward(p.sum()).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.25; 4]);

        let c = g.constant(Tensor::full(&[2, 3, 4, 6], 1.5));
        let pc = c.avg_pool2d((2, 3)).unwrap().value();
        assert_eq!(pc.shape(), &[2, 3, 2, 2]);
        assert!(pc.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn avg_pool_drops_remainder() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
        let p = x.avg_pool2d((2, 2)).unwrap();
        assert_eq!(p.shape(), vec![1, 1, 1, 1]);
        assert_eq!(p.item(), 3.0);
    }

    #[test]
    fn backward_product_rule_and_accumulation() {
        let g = Graph::new();
        let x = g.leaf(vec_t(&[1.0, 2.0]));
        let y = g.leaf(vec_t(&[3.0, 5.0]));
        let grads = g.backward(x.mul(y).unwrap().sum()).unwrap();
        assert_eq!(grads.wrt(x).data(), &[3.0, 5.0]);
        assert_eq!(grads.wrt(y).data(), &[1.0, 2.0]);

        // x used twice: d(x*x + x)/dx = 2x + 1
        let g = Graph::new();
        let x = g.leaf(vec_t(&[4.0]));
        let f = x.mul(x).unwrap().add(x).unwrap().sum();
        assert_eq!(g.backward(f).unwrap().wrt(x).data(), &[9.0]);
    }

    #[test]
    fn backward_needs_scalar() {
        let g = Graph::new();
        let x = g.leaf(vec_t(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_and_detached_values_get_no_gradient() {
        let g = Graph::new();
        let x = g.leaf(vec_t(&[2.0]));
        let c = g.constant(vec_t(&[3.0]));
        let d = x.detach();
        let f = x.mul(c).unwrap().add(d.square()).unwrap().sum();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.len(), 1);
        assert!(grads.get(c).is_none());
        assert!(grads.get(d).is_none());
        assert_eq!(grads.wrt(x).data(), &[3.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero() {
        let g = Graph::new();
        let x = g.leaf(vec_t(&[1.0]));
        let unused = g.leaf(Tensor::zeros(&[2, 2]));
        let grads = g.backward(x.square().sum()).unwrap();
        assert_eq!(grads.wrt(unused), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn concat_and_transpose_route_gradients() {
        let g = Graph::new();
        let a = g.leaf(Tensor::scalar(1.0));
        let b = g.leaf(vec_t(&[2.0, 3.0]));
        let w = g.constant(vec_t(&[10.0, 20.0, 30.0]));
        let f = g.concat(&[a, b]).unwrap().mul(w).unwrap().sum();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.wrt(a).data(), &[10.0]);
        assert_eq!(grads.wrt(b).data(), &[20.0, 30.0]);

        let g = Graph::new();
        let m = g.leaf(Tensor::matrix(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let mt = m.t().unwrap();
        assert_eq!(mt.shape(), vec![3, 1]);
        let wt = g.constant(Tensor::matrix(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap());
        let grads = g.backward(mt.mul(wt).unwrap().sum()).unwrap();
        assert_eq!(grads.wrt(m).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let g = Graph::new();
        let x = g.leaf(vec_t(&[1.0, 2.0, 3.0]));
        let s = g.leaf(Tensor::scalar(2.0));
        let grads = g.backward(x.mul(s).unwrap().sum()).unwrap();
        assert_eq!(grads.wrt(s).data(), &[6.0]);
        assert_eq!(grads.wrt(x).data(), &[2.0, 2.0, 2.0]);
    }
}
