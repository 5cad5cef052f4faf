//! Forward constructors for every differentiable operation.

use rand::Rng;

use super::kernels::{self, broadcast_map, split_axis, ConvGeometry};
use super::{Graph, Op, Var};
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self { stride: 1, padding: 0, groups: 1 }
    }
}

impl<T: Element> Graph<T> {
    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(CmfError::shape(format!("{op}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let y = self.value(x).map(f);
        self.push(y, op)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        let y = Tensor::from_vec(av.shape(), data);
        self.push(y, op)
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CmfError::shape(format!("matmul {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_vec(&[m, n], c), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(CmfError::shape(format!("transpose expects rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let t = kernels::transpose(self.value(x).data(), r, c);
        Ok(self.push(Tensor::from_vec(&[c, r], t), Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.binary(a, b, |p, q| p + q, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.binary(a, b, |p, q| p - q, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.binary(a, b, |p, q| p * q, Op::Mul(a, b)))
    }

    fn check_broadcast(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == sb.len() && sa.iter().zip(sb).all(|(&x, &y)| y == x || y == 1);
        if !ok {
            return Err(CmfError::shape(format!("{op}: cannot broadcast {sb:?} onto {sa:?}")));
        }
        Ok(())
    }

    fn broadcast(&mut self, a: Var, b: Var, mul: bool) -> Result<Var> {
        self.check_broadcast(if mul { "mul_broadcast" } else { "add_broadcast" }, a, b)?;
        let map = broadcast_map(self.shape(a), self.shape(b));
        let (av, bv) = (self.value(a), self.value(b));
        let data =
            av.data().iter().zip(&map).map(|(&p, &j)| if mul { p * bv.data()[j] } else { p + bv.data()[j] }).collect();
        let y = Tensor::from_vec(av.shape(), data);
        let op = if mul { Op::MulBroadcast(a, b) } else { Op::AddBroadcast(a, b) };
        Ok(self.push(y, op))
    }

    /// `a + b` where `b` has `a`'s rank and each dimension is 1 or matches.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast(a, b, false)
    }

    /// `a ⊙ b` where `b` has `a`'s rank and each dimension is 1 or matches.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast(a, b, true)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, T::sqrt, Op::Sqrt(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, T::recip, Op::Recip(x))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(CmfError::shape(format!("softmax axis {axis} on {:?}", xv.shape())));
        }
        let (outer, dim, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut y = vec![T::zero(); src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let base = o * dim * inner + j;
                let mut m = T::neg_infinity();
                for d in 0..dim {
                    m = m.max(src[base + d * inner]);
                }
                let mut z = T::zero();
                for d in 0..dim {
                    let e = (src[base + d * inner] - m).exp();
                    y[base + d * inner] = e;
                    z += e;
                }
                for d in 0..dim {
                    y[base + d * inner] /= z;
                }
            }
        }
        let y = Tensor::from_vec(xv.shape(), y);
        Ok(self.push(y, Op::Softmax { x, axis }))
    }

    /// Normalizes over `axis` with population variance, then applies the
    /// per-feature affine `gamma`, `beta` (each of length `shape[axis]`).
    pub fn layer_norm(&mut self, x: Var, axis: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(CmfError::invalid(format!("layer_norm epsilon must be positive, got {eps}")));
        }
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(CmfError::shape(format!("layer_norm axis {axis} on {xs:?}")));
        }
        let dim = xs[axis];
        if self.shape(gamma) != [dim] || self.shape(beta) != [dim] {
            return Err(CmfError::shape(format!(
                "layer_norm affine {:?}/{:?} for normalized size {dim}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (outer, _, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let gam = self.value(gamma).data();
        let bet = self.value(beta).data();
        let n = T::of(dim as f64);
        let eps = T::of(eps);
        let mut y = vec![T::zero(); src.len()];
        let mut mean = Vec::with_capacity(outer * inner);
        let mut rstd = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let base = o * dim * inner + j;
                let mut mu = T::zero();
                for d in 0..dim {
                    mu += src[base + d * inner];
                }
                mu /= n;
                let mut var = T::zero();
                for d in 0..dim {
                    let c = src[base + d * inner] - mu;
                    var += c * c;
                }
                var /= n;
                let rs = T::one() / (var + eps).sqrt();
                for d in 0..dim {
                    let k = base + d * inner;
                    y[k] = (src[k] - mu) * rs * gam[d] + bet[d];
                }
                mean.push(mu);
                rstd.push(rs);
            }
        }
        let y = Tensor::from_vec(&xs, y);
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, axis, mean, rstd }))
    }

    /// Affine map over the trailing dimension: `x[..., d_in] · w[d_in, d_out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(CmfError::shape(format!("linear {xs:?} · {ws:?}")));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(CmfError::shape(format!("linear bias {:?} for width {dout}", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / din;
        let mut y = kernels::matmul(self.value(x).data(), self.value(w).data(), rows, din, dout);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(dout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = dout;
        Ok(self.push(Tensor::from_vec(&shape, y), Op::Linear { x, w, b }))
    }

    /// 2-D convolution of a single `[C_in, H, W]` image with weights
    /// `[C_out, C_in/groups, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 {
            return Err(CmfError::shape(format!("conv2d expects [C,H,W] and 4-d weights, got {xs:?}, {ws:?}")));
        }
        if p.groups == 0 || p.stride == 0 {
            return Err(CmfError::invalid("conv2d groups and stride must be positive"));
        }
        if xs[0] % p.groups != 0 || ws[0] % p.groups != 0 {
            return Err(CmfError::invalid(format!(
                "conv2d channels {} -> {} not divisible by groups {}",
                xs[0], ws[0], p.groups
            )));
        }
        if ws[1] != xs[0] / p.groups {
            return Err(CmfError::shape(format!(
                "conv2d weight expects {} input channels per group, input has {}",
                ws[1],
                xs[0] / p.groups
            )));
        }
        if ws[2] > xs[1] + 2 * p.padding || ws[3] > xs[2] + 2 * p.padding {
            return Err(CmfError::invalid(format!(
                "conv2d kernel {}x{} larger than padded input {}x{}",
                ws[2],
                ws[3],
                xs[1] + 2 * p.padding,
                xs[2] + 2 * p.padding
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(CmfError::shape(format!("conv2d bias {:?} for {} outputs", self.shape(b), ws[0])));
            }
        }
        let geom = ConvGeometry {
            c_in: xs[0],
            h: xs[1],
            w: xs[2],
            c_out: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride: p.stride,
            padding: p.padding,
            groups: p.groups,
        };
        let y =
            kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let y = Tensor::from_vec(&[geom.c_out, geom.out_h(), geom.out_w()], y);
        Ok(self.push(y, Op::Conv2d { x, w, b, geom }))
    }

    fn expect_chw(&self, op: &str, x: Var) -> Result<[usize; 3]> {
        match *self.shape(x) {
            [c, h, w] => Ok([c, h, w]),
            ref s => Err(CmfError::shape(format!("{op} expects [C,H,W], got {s:?}"))),
        }
    }

    /// `[C,H,W] → [C]`
    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let [c, h, w] = self.expect_chw("global_pool", x)?;
        let plane = h * w;
        let src = self.value(x).data();
        let mut y = Vec::with_capacity(c);
        let mut argmax = Vec::new();
        for ch in 0..c {
            let s = &src[ch * plane..(ch + 1) * plane];
            match kind {
                PoolKind::Avg => y.push(s.iter().copied().sum::<T>() / T::of(plane as f64)),
                PoolKind::Max => {
                    let best = first_argmax(s);
                    y.push(s[best]);
                    argmax.push(ch * plane + best);
                }
            }
        }
        Ok(self.push(Tensor::from_vec(&[c], y), Op::GlobalPool { x, kind, argmax }))
    }

    /// Pools across channels: `[C,H,W] → [1,H,W]`.
    pub fn channel_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let [c, h, w] = self.expect_chw("channel_pool", x)?;
        let plane = h * w;
        let src = self.value(x).data();
        let mut y = vec![T::zero(); plane];
        let mut argmax = Vec::new();
        match kind {
            PoolKind::Avg => {
                for ch in 0..c {
                    for (o, &v) in y.iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                        *o += v;
                    }
                }
                let n = T::of(c as f64);
                y.iter_mut().for_each(|v| *v /= n);
            }
            PoolKind::Max => {
                argmax = (0..plane).collect();
                y.copy_from_slice(&src[..plane]);
                for ch in 1..c {
                    for p in 0..plane {
                        let v = src[ch * plane + p];
                        if v > y[p] {
                            y[p] = v;
                            argmax[p] = ch * plane + p;
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::from_vec(&[1, h, w], y), Op::ChannelPool { x, kind, argmax }))
    }

    /// Windowed pooling without padding: `[C,H,W] → [C,H',W']`.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        let [c, h, w] = self.expect_chw("pool2d", x)?;
        if window == 0 || stride == 0 || window > h || window > w {
            return Err(CmfError::invalid(format!("pool window {window} does not fit {h}x{w}")));
        }
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let src = self.value(x).data();
        let mut y = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::new();
        let share = T::of((window * window) as f64);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    let mut best = usize::MAX;
                    for wy in 0..window {
                        for wx in 0..window {
                            let k = (ch * h + oy * stride + wy) * w + ox * stride + wx;
                            acc += src[k];
                            if best == usize::MAX || src[k] > src[best] {
                                best = k;
                            }
                        }
                    }
                    match kind {
                        PoolKind::Avg => y.push(acc / share),
                        PoolKind::Max => {
                            y.push(src[best]);
                            argmax.push(best);
                        }
                    }
                }
            }
        }
        let y = Tensor::from_vec(&[c, oh, ow], y);
        Ok(self.push(y, Op::Pool2d { x, kind, window, stride, argmax }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| CmfError::invalid("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(CmfError::shape(format!("concat axis {axis} on {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(CmfError::shape(format!("concat {s:?} with {base:?} along {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let d = self.shape(*v)[axis];
                let src = self.value(*v).data();
                y.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::from_vec(&shape, y), Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(CmfError::shape(format!("narrow {start}..{} on axis {axis} of {xs:?}", start + len)));
        }
        let (outer, total, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * total + start) * inner;
            y.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        Ok(self.push(Tensor::from_vec(&shape, y), Op::Narrow { x, axis, start }))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Sums along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(CmfError::shape(format!("sum_axis {axis} on {xs:?}")));
        }
        let (outer, dim, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut y = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                for j in 0..inner {
                    y[o * inner + j] += src[(o * dim + d) * inner + j];
                }
            }
        }
        let mut shape = xs;
        shape[axis] = 1;
        Ok(self.push(Tensor::from_vec(&shape, y), Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| CmfError::shape(format!("mean_axis {axis} on {:?}", self.shape(x))))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, T::one() / T::of(n as f64)))
    }

    /// Selects one element (row-major flat index) as a rank-0 tensor.
    pub fn index(&mut self, x: Var, flat: usize) -> Result<Var> {
        let xv = self.value(x);
        if flat >= xv.numel() {
            return Err(CmfError::shape(format!("index {flat} out of {}", xv.numel())));
        }
        let v = xv.data()[flat];
        Ok(self.push(Tensor::scalar(v), Op::Index { x, flat }))
    }

    /// Inverted dropout. Identity when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(CmfError::invalid(format!("dropout rate must lie in [0,1), got {p}")));
        }
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> =
            (0..self.value(x).numel()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let y = Tensor::from_vec(xv.shape(), data);
        Ok(self.push(y, Op::Dropout { x, mask }))
    }

    /// Identity in the forward pass; multiplies the adjoint by `factor`.
    pub fn grad_scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).clone();
        self.push(y, Op::GradScale(x, factor))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(CmfError::shape(format!("cross_entropy logits {s:?} for {} labels", labels.len())));
        }
        if labels.is_empty() {
            return Err(CmfError::invalid("cross_entropy over an empty batch"));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(CmfError::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); src.len()];
        let mut loss = T::zero();
        for (row, &label) in labels.iter().enumerate() {
            let r = &src[row * k..(row + 1) * k];
            let m = r.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = r.iter().map(|&v| (v - m).exp()).sum();
            for (p, &v) in probs[row * k..(row + 1) * k].iter_mut().zip(r) {
                *p = (v - m).exp() / z;
            }
            loss += z.ln() + m - r[label];
        }
        loss /= T::of(labels.len() as f64);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }
}

fn first_argmax<T: Element>(s: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = i;
        }
    }
    best
}
