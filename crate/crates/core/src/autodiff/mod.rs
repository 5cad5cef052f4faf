//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is the tape: every operation appends a node holding its
//! output value and enough saved state to replay the adjoint. Nodes are
//! appended in evaluation order, so walking the vector backwards is a
//! reverse topological traversal.

mod gradcheck;
pub(crate) mod kernels;
mod ops;

pub use gradcheck::{grad_check, grad_check_inputs, GradCheckConfig, GradCheckReport};
pub use kernels::ConvGeometry;
pub use ops::{ConvParams, PoolKind};

use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

use kernels::{broadcast_map, split_axis};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Sqrt(Var),
    Recip(Var),
    Gelu(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, axis: usize, mean: Vec<T>, rstd: Vec<T> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    GlobalPool { x: Var, kind: PoolKind, argmax: Vec<usize> },
    ChannelPool { x: Var, kind: PoolKind, argmax: Vec<usize> },
    Pool2d { x: Var, kind: PoolKind, window: usize, stride: usize, argmax: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    SumAll(Var),
    SumAxis { x: Var, axis: usize },
    Index { x: Var, flat: usize },
    Dropout { x: Var, mask: Vec<T> },
    GradScale(Var, T),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::MulBroadcast(..) => "mul_broadcast",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Recip(_) => "recip",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::GlobalPool { .. } => "global_pool",
            Op::ChannelPool { .. } => "channel_pool",
            Op::Pool2d { .. } => "pool2d",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::SumAll(_) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Index { .. } => "index",
            Op::Dropout { .. } => "dropout",
            Op::GradScale(..) => "grad_scale",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBroadcast(a, b) | Op::MulBroadcast(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Square(x)
            | Op::Sqrt(x)
            | Op::Recip(x)
            | Op::Gelu(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::SumAll(x)
            | Op::GradScale(x, _) => vec![*x],
            Op::Softmax { x, .. }
            | Op::GlobalPool { x, .. }
            | Op::ChannelPool { x, .. }
            | Op::Pool2d { x, .. }
            | Op::Narrow { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Index { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// The tape. Single-threaded by construction; independent graphs may live
/// on different threads.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
    nonfinite: Option<String>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), backward_done: false, nonfinite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Records a leaf whose adjoint is collected by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adjoint of `v` after [`Graph::backward`]; `None` if `v` does not
    /// influence the loss or does not require a gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// First operation that produced a NaN or infinity, if any.
    pub fn nonfinite_origin(&self) -> Option<&str> {
        self.nonfinite.as_deref()
    }

    /// Fails with the name of the first non-finite operation, tagged with
    /// `context` (usually the module being evaluated).
    pub fn check_finite(&self, context: &str) -> Result<()> {
        match &self.nonfinite {
            Some(op) => Err(CmfError::NonFinite(format!("{context} (first at {op})"))),
            None => Ok(()),
        }
    }

    /// Clears adjoints so `backward` may run again on the same tape.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, leaf_requires_grad: bool) -> Var {
        let requires_grad = match op {
            Op::Leaf => leaf_requires_grad,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(format!("{} (node {})", op.name(), self.nodes.len()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.push_node(value, op, false)
    }

    /// Propagates adjoints from the scalar `loss` to every node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(CmfError::Autodiff(format!("variable {} is not on this tape", loss.0)));
        }
        if self.backward_done {
            return Err(CmfError::Autodiff("backward already ran; call zero_grad first".into()));
        }
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(CmfError::Autodiff(format!("loss must be scalar, got shape {loss_shape:?}")));
        }
        if let Some(op) = &self.nonfinite {
            return Err(CmfError::NonFinite(format!("forward pass (first at {op})")));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::ones(&loss_shape));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.grads[i].clone() else { continue };
            for (input, g) in self.adjoints(i, &gy)? {
                self.accumulate(input, g)?;
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        let expect = self.nodes[v.0].value.shape();
        if g.shape() != expect {
            return Err(CmfError::Autodiff(format!(
                "adjoint shape {:?} does not match node shape {expect:?}",
                g.shape()
            )));
        }
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adjoints of node `i`'s inputs given its output adjoint `gy`.
    fn adjoints(&self, i: usize, gy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<T>| Tensor::from_vec(self.shape(v), data);
        let zip =
            |a: &[T], b: &[T], f: &dyn Fn(T, T) -> T| -> Vec<T> { a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect() };
        let g = gy.data();
        let mut out = Vec::new();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    out.push((*a, like(*a, kernels::matmul_nt(g, val(*b).data(), m, n, k))));
                }
                if self.wants(*b) {
                    out.push((*b, like(*b, kernels::matmul_tn(val(*a).data(), g, m, k, n))));
                }
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                out.push((*x, like(*x, kernels::transpose(g, s[1], s[0]))));
            }
            Op::Reshape(x) => out.push((*x, like(*x, g.to_vec()))),
            Op::Add(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    out.push((*a, like(*a, zip(g, val(*b).data(), &|p, q| p * q))));
                }
                if self.wants(*b) {
                    out.push((*b, like(*b, zip(g, val(*a).data(), &|p, q| p * q))));
                }
            }
            Op::AddBroadcast(a, b) | Op::MulBroadcast(a, b) => {
                let is_mul = matches!(node.op, Op::MulBroadcast(..));
                let map = broadcast_map(self.shape(*a), self.shape(*b));
                let bv = val(*b).data();
                if self.wants(*a) {
                    let ga = if is_mul { g.iter().zip(&map).map(|(&gv, &j)| gv * bv[j]).collect() } else { g.to_vec() };
                    out.push((*a, like(*a, ga)));
                }
                if self.wants(*b) {
                    let av = val(*a).data();
                    let mut gb = vec![T::zero(); bv.len()];
                    for (idx, &j) in map.iter().enumerate() {
                        gb[j] += if is_mul { g[idx] * av[idx] } else { g[idx] };
                    }
                    out.push((*b, like(*b, gb)));
                }
            }
            Op::Scale(x, c) => out.push((*x, gy.map(|v| v * *c))),
            Op::AddScalar(x) => out.push((*x, gy.clone())),
            Op::Square(x) => out.push((*x, like(*x, zip(g, val(*x).data(), &|p, q| p * q * T::of(2.0))))),
            Op::Sqrt(x) => out.push((*x, like(*x, zip(g, y.data(), &|p, q| p / (q * T::of(2.0)))))),
            Op::Recip(x) => out.push((*x, like(*x, zip(g, y.data(), &|p, q| -p * q * q)))),
            Op::Gelu(x) => out.push((*x, like(*x, zip(g, val(*x).data(), &|p, q| p * kernels::gelu_grad(q))))),
            Op::Sigmoid(x) => out.push((*x, like(*x, zip(g, y.data(), &|p, q| p * q * (T::one() - q))))),
            Op::Relu(x) => {
                out.push((*x, like(*x, zip(g, val(*x).data(), &|p, q| if q > T::zero() { p } else { T::zero() }))))
            }
            Op::Softmax { x, axis } => {
                let (outer, dim, inner) = split_axis(y.shape(), *axis);
                let yv = y.data();
                let mut gx = vec![T::zero(); yv.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let base = o * dim * inner + j;
                        let mut dotp = T::zero();
                        for d in 0..dim {
                            dotp += g[base + d * inner] * yv[base + d * inner];
                        }
                        for d in 0..dim {
                            let k = base + d * inner;
                            gx[k] = yv[k] * (g[k] - dotp);
                        }
                    }
                }
                out.push((*x, like(*x, gx)));
            }
            Op::LayerNorm { x, gamma, beta, axis, mean, rstd } => {
                let xv = val(*x).data();
                let gam = val(*gamma).data();
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let mut gx = vec![T::zero(); xv.len()];
                let mut ggam = vec![T::zero(); dim];
                let mut gbet = vec![T::zero(); dim];
                let n = T::of(dim as f64);
                let mut xhat = vec![T::zero(); dim];
                let mut gxhat = vec![T::zero(); dim];
                for o in 0..outer {
                    for j in 0..inner {
                        let pos = o * inner + j;
                        let base = o * dim * inner + j;
                        let (mu, rs) = (mean[pos], rstd[pos]);
                        let mut sum_g = T::zero();
                        let mut sum_gx = T::zero();
                        for d in 0..dim {
                            let k = base + d * inner;
                            xhat[d] = (xv[k] - mu) * rs;
                            gxhat[d] = g[k] * gam[d];
                            ggam[d] += g[k] * xhat[d];
                            gbet[d] += g[k];
                            sum_g += gxhat[d];
                            sum_gx += gxhat[d] * xhat[d];
                        }
                        for d in 0..dim {
                            gx[base + d * inner] = rs * (gxhat[d] - sum_g / n - xhat[d] * sum_gx / n);
                        }
                    }
                }
                out.push((*x, like(*x, gx)));
                out.push((*gamma, like(*gamma, ggam)));
                out.push((*beta, like(*beta, gbet)));
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (din, dout) = (ws[0], ws[1]);
                let rows = val(*x).numel() / din;
                if self.wants(*x) {
                    out.push((*x, like(*x, kernels::matmul_nt(g, val(*w).data(), rows, dout, din))));
                }
                if self.wants(*w) {
                    out.push((*w, like(*w, kernels::matmul_tn(val(*x).data(), g, rows, din, dout))));
                }
                if let Some(b) = b {
                    let mut gb = vec![T::zero(); dout];
                    for row in g.chunks(dout) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((*b, like(*b, gb)));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) =
                    kernels::conv2d_backward(geom, val(*x).data(), val(*w).data(), g, self.wants(*x), self.wants(*w));
                if let Some(gx) = gx {
                    out.push((*x, like(*x, gx)));
                }
                if let Some(gw) = gw {
                    out.push((*w, like(*w, gw)));
                }
                if let Some(b) = b {
                    out.push((*b, like(*b, gb)));
                }
            }
            Op::GlobalPool { x, kind, argmax } => {
                let s = self.shape(*x);
                let plane = s[1] * s[2];
                let mut gx = vec![T::zero(); s[0] * plane];
                for c in 0..s[0] {
                    match kind {
                        PoolKind::Avg => {
                            let share = g[c] / T::of(plane as f64);
                            gx[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = share);
                        }
                        PoolKind::Max => gx[argmax[c]] = g[c],
                    }
                }
                out.push((*x, like(*x, gx)));
            }
            Op::ChannelPool { x, kind, argmax } => {
                let s = self.shape(*x);
                let plane = s[1] * s[2];
                let mut gx = vec![T::zero(); s[0] * plane];
                for p in 0..plane {
                    match kind {
                        PoolKind::Avg => {
                            let share = g[p] / T::of(s[0] as f64);
                            for c in 0..s[0] {
                                gx[c * plane + p] = share;
                            }
                        }
                        PoolKind::Max => gx[argmax[p]] = g[p],
                    }
                }
                out.push((*x, like(*x, gx)));
            }
            Op::Pool2d { x, kind, window, stride, argmax } => {
                let s = self.shape(*x);
                let ys = y.shape();
                let mut gx = vec![T::zero(); s.iter().product()];
                let (oh, ow) = (ys[1], ys[2]);
                let share = T::one() / T::of((window * window) as f64);
                for c in 0..s[0] {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let k = (c * oh + oy) * ow + ox;
                            match kind {
                                PoolKind::Max => gx[argmax[k]] += g[k],
                                PoolKind::Avg => {
                                    for wy in 0..*window {
                                        for wx in 0..*window {
                                            let iy = oy * stride + wy;
                                            let ix = ox * stride + wx;
                                            gx[(c * s[1] + iy) * s[2] + ix] += g[k] * share;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                out.push((*x, like(*x, gx)));
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(y.shape(), *axis);
                let total = y.shape()[*axis];
                let mut offset = 0;
                for v in inputs {
                    let d = self.shape(*v)[*axis];
                    if self.wants(*v) {
                        let mut gv = Vec::with_capacity(outer * d * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[start..start + d * inner]);
                        }
                        out.push((*v, like(*v, gv)));
                    }
                    offset += d;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, total, inner) = split_axis(self.shape(*x), *axis);
                let len = y.shape()[*axis];
                let mut gx = vec![T::zero(); outer * total * inner];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                out.push((*x, like(*x, gx)));
            }
            Op::SumAll(x) => out.push((*x, Tensor::full(self.shape(*x), g[0]))),
            Op::SumAxis { x, axis } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let mut gx = vec![T::zero(); outer * dim * inner];
                for o in 0..outer {
                    for d in 0..dim {
                        for j in 0..inner {
                            gx[(o * dim + d) * inner + j] = g[o * inner + j];
                        }
                    }
                }
                out.push((*x, like(*x, gx)));
            }
            Op::Index { x, flat } => {
                let mut gx = vec![T::zero(); val(*x).numel()];
                gx[*flat] = g[0];
                out.push((*x, like(*x, gx)));
            }
            Op::Dropout { x, mask } => out.push((*x, like(*x, zip(g, mask, &|p, q| p * q)))),
            Op::GradScale(x, c) => out.push((*x, gy.map(|v| v * *c))),
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let batch = labels.len();
                let scale = g[0] / T::of(batch as f64);
                let mut gl = probs.clone();
                for (row, &label) in labels.iter().enumerate() {
                    gl[row * k + label] -= T::one();
                }
                gl.iter_mut().for_each(|v| *v *= scale);
                out.push((*logits, like(*logits, gl)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 5.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]));
        let sq = g.square(x);
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_repeat_and_foreign_vars() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(CmfError::Autodiff(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(CmfError::Autodiff(_))));
        g.zero_grad();
        g.backward(s).unwrap();

        let mut empty = Graph::<f64>::new();
        assert!(matches!(empty.backward(Var(0)), Err(CmfError::Autodiff(_))));
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(&[1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn unreachable_and_constant_nodes_have_no_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(&[1], &[3.0]));
        let unused = g.leaf(Tensor::from_f64(&[1], &[1.0]));
        let c = g.constant(Tensor::from_f64(&[1], &[2.0]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
        assert!(g.grad(unused).is_none());
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn non_finite_values_are_surfaced() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_f64(&[2], &[0.0, 1.0]));
        let r = g.recip(x);
        let s = g.sum(r);
        assert!(g.nonfinite_origin().unwrap().starts_with("recip"));
        assert!(matches!(g.check_finite("test"), Err(CmfError::NonFinite(_))));
        assert!(matches!(g.backward(s), Err(CmfError::NonFinite(_))));
    }
}

#[cfg(test)]
mod op_tests;
