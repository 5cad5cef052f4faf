//! ConvNeXt block: depthwise 7×7 convolution, channel LayerNorm, 4× pointwise
//! expansion with GELU, contraction, layer-scaled residual. Optionally with
//! global response normalization after the GELU.

use rand::Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::autodiff::{ConvParams, Graph, Var};
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

pub const DW_KERNEL: usize = 7;
pub const EXPANSION: usize = 4;
pub const LN_EPS: f64 = 1e-6;
pub const LAYER_SCALE_INIT: f64 = 1e-6;
const GRN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Grn {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct ConvNextBlock {
    pub channels: usize,
    /// `[C, 1, 7, 7]`
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    /// `[C, 4C]`
    pub w1: ParamId,
    pub b1: ParamId,
    /// `[4C, C]`
    pub w2: ParamId,
    pub b2: ParamId,
    pub layer_scale: ParamId,
    pub grn: Option<Grn>,
}

impl ConvNextBlock {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        grn: bool,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        let c = channels;
        let h = EXPANSION * c;
        let dw_kernel = store.add(format!("{prefix}.dw_kernel"), init.weight(&[c, 1, DW_KERNEL, DW_KERNEL]))?;
        let dw_bias = store.add(format!("{prefix}.dw_bias"), Tensor::zeros(&[c]))?;
        let ln_gamma = store.add(format!("{prefix}.ln_gamma"), Tensor::ones(&[c]))?;
        let ln_beta = store.add(format!("{prefix}.ln_beta"), Tensor::zeros(&[c]))?;
        let w1 = store.add(format!("{prefix}.w1"), init.weight(&[c, h]))?;
        let b1 = store.add(format!("{prefix}.b1"), Tensor::zeros(&[h]))?;
        let grn = if grn {
            Some(Grn {
                gamma: store.add(format!("{prefix}.grn_gamma"), Tensor::zeros(&[1, h]))?,
                beta: store.add(format!("{prefix}.grn_beta"), Tensor::zeros(&[1, h]))?,
            })
        } else {
            None
        };
        let w2 = store.add(format!("{prefix}.w2"), init.weight(&[h, c]))?;
        let b2 = store.add(format!("{prefix}.b2"), Tensor::zeros(&[c]))?;
        let layer_scale = store.add(format!("{prefix}.layer_scale"), Tensor::full(&[c], T::of(LAYER_SCALE_INIT)))?;
        Ok(Self { channels, dw_kernel, dw_bias, ln_gamma, ln_beta, w1, b1, w2, b2, layer_scale, grn })
    }

    /// `Y = X + α · W₂ · GELU(W₁ · LN(DWConv(X)))`
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = match *g.shape(x) {
            [c, h, w] if c == self.channels => (c, h, w),
            ref s => return Err(CmfError::shape(format!("ConvNeXt block for {} channels got {s:?}", self.channels))),
        };
        let conv = ConvParams { padding: DW_KERNEL / 2, groups: c, ..Default::default() };
        let y = g.conv2d(x, p.var(self.dw_kernel), Some(p.var(self.dw_bias)), conv)?;
        let y = g.layer_norm(y, 0, p.var(self.ln_gamma), p.var(self.ln_beta), LN_EPS)?;
        let y = g.reshape(y, &[c, h * w])?;
        let tokens = g.transpose(y)?;
        let hidden = g.linear(tokens, p.var(self.w1), Some(p.var(self.b1)))?;
        let mut hidden = g.gelu(hidden);
        if let Some(grn) = &self.grn {
            hidden = grn_forward(g, p, grn, hidden)?;
        }
        let out = g.linear(hidden, p.var(self.w2), Some(p.var(self.b2)))?;
        let scale = g.reshape(p.var(self.layer_scale), &[1, c])?;
        let out = g.mul_broadcast(out, scale)?;
        let out = g.transpose(out)?;
        let out = g.reshape(out, &[c, h, w])?;
        g.add(x, out)
    }
}

/// Global response normalization over `[N, D]` tokens:
/// `γ · (x · N(x)) + β + x`, with `G_d = ‖x_{·,d}‖₂` and `N = G / mean(G)`.
fn grn_forward<T: Element>(g: &mut Graph<T>, p: &Bound, grn: &Grn, x: Var) -> Result<Var> {
    let sq = g.square(x);
    let energy = g.sum_axis(sq, 0)?;
    let energy = g.add_scalar(energy, T::of(1e-12));
    let gx = g.sqrt(energy);
    let mean = g.mean_axis(gx, 1)?;
    let mean = g.add_scalar(mean, T::of(GRN_EPS));
    let inv = g.recip(mean);
    let nx = g.mul_broadcast(gx, inv)?;
    let xn = g.mul_broadcast(x, nx)?;
    let scaled = g.mul_broadcast(xn, p.var(grn.gamma))?;
    let shifted = g.add_broadcast(scaled, p.var(grn.beta))?;
    g.add(shifted, x)
}
