//! Dual attention: position attention (pixel-pair affinities) and channel
//! attention (channel-pair affinities), fused by summation.

use rand::Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct Danet {
    pub channels: usize,
    /// 1×1 convolutions `[C, C, 1, 1]` producing B, C and D.
    pub conv_b: ParamId,
    pub conv_c: ParamId,
    pub conv_d: ParamId,
    /// Position-attention residual scale, starts at 0.
    pub alpha: ParamId,
    /// Channel-attention residual scale, starts at 0.
    pub beta: ParamId,
}

impl Danet {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        let shape = [channels, channels, 1, 1];
        Ok(Self {
            channels,
            conv_b: store.add(format!("{prefix}.conv_b"), init.weight(&shape))?,
            conv_c: store.add(format!("{prefix}.conv_c"), init.weight(&shape))?,
            conv_d: store.add(format!("{prefix}.conv_d"), init.weight(&shape))?,
            alpha: store.add(format!("{prefix}.alpha"), Tensor::zeros(&[1]))?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[1]))?,
        })
    }

    fn flatten<T: Element>(&self, g: &mut Graph<T>, a: Var) -> Result<(Var, [usize; 3])> {
        match *g.shape(a) {
            [c, h, w] if c == self.channels => Ok((g.reshape(a, &[c, h * w])?, [c, h, w])),
            ref s => Err(CmfError::shape(format!("DANet for {} channels got {s:?}", self.channels))),
        }
    }

    /// Pointwise convolution as `W[C_out, C_in] · A[C_in, N]`.
    fn pointwise<T: Element>(&self, g: &mut Graph<T>, p: &Bound, w: ParamId, a: Var) -> Result<Var> {
        let w = g.reshape(p.var(w), &[self.channels, self.channels])?;
        g.matmul(w, a)
    }

    /// Spatial attention map `S[j, i] = softmax_i(B_i · C_j)`, shape `[N, N]`;
    /// every row sums to one.
    pub fn position_map<T: Element>(&self, g: &mut Graph<T>, p: &Bound, a: Var) -> Result<Var> {
        let (flat, _) = self.flatten(g, a)?;
        let b = self.pointwise(g, p, self.conv_b, flat)?;
        let c = self.pointwise(g, p, self.conv_c, flat)?;
        let ct = g.transpose(c)?;
        let energy = g.matmul(ct, b)?;
        g.softmax(energy, 1)
    }

    /// `E_j = α Σ_i S[j,i] D_i + A_j`
    pub fn position_attention<T: Element>(&self, g: &mut Graph<T>, p: &Bound, a: Var) -> Result<Var> {
        let (flat, [c, h, w]) = self.flatten(g, a)?;
        let s = self.position_map(g, p, a)?;
        let d = self.pointwise(g, p, self.conv_d, flat)?;
        let st = g.transpose(s)?;
        let attended = g.matmul(d, st)?;
        let alpha = g.reshape(p.var(self.alpha), &[1, 1])?;
        let scaled = g.mul_broadcast(attended, alpha)?;
        let out = g.add(scaled, flat)?;
        g.reshape(out, &[c, h, w])
    }

    /// Channel attention map `X[j, i] = softmax_i(A_i · A_j)`, shape `[C, C]`.
    pub fn channel_map<T: Element>(&self, g: &mut Graph<T>, a: Var) -> Result<Var> {
        let (flat, _) = self.flatten(g, a)?;
        let ft = g.transpose(flat)?;
        let energy = g.matmul(flat, ft)?;
        g.softmax(energy, 1)
    }

    /// `E_j = β Σ_i X[j,i] A_i + A_j`
    pub fn channel_attention<T: Element>(&self, g: &mut Graph<T>, p: &Bound, a: Var) -> Result<Var> {
        let (flat, [c, h, w]) = self.flatten(g, a)?;
        let x = self.channel_map(g, a)?;
        let attended = g.matmul(x, flat)?;
        let beta = g.reshape(p.var(self.beta), &[1, 1])?;
        let scaled = g.mul_broadcast(attended, beta)?;
        let out = g.add(scaled, flat)?;
        g.reshape(out, &[c, h, w])
    }

    /// Sum of the two branches, each computed from the same input.
    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, a: Var) -> Result<Var> {
        let pam = self.position_attention(g, p, a)?;
        let cam = self.channel_attention(g, p, a)?;
        g.add(pam, cam)
    }
}
