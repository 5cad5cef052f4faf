//! Convolutional block attention: a channel gate followed by a spatial gate.

use rand::Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::autodiff::{ConvParams, Graph, PoolKind, Var};
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

pub const SPATIAL_KERNEL: usize = 7;

#[derive(Debug, Clone)]
pub struct Cbam {
    pub channels: usize,
    pub reduction: usize,
    /// `[C, C/r]`, shared by the average and max branches.
    pub mlp_w0: ParamId,
    /// `[C/r, C]`
    pub mlp_w1: ParamId,
    /// `[1, 2, 7, 7]` over the stacked `[avg; max]` channel descriptors.
    pub spatial_kernel: ParamId,
}

impl Cbam {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(CmfError::invalid(format!("CBAM channels {channels} not divisible by reduction {reduction}")));
        }
        let hidden = channels / reduction;
        Ok(Self {
            channels,
            reduction,
            mlp_w0: store.add(format!("{prefix}.mlp_w0"), init.weight(&[channels, hidden]))?,
            mlp_w1: store.add(format!("{prefix}.mlp_w1"), init.weight(&[hidden, channels]))?,
            spatial_kernel: store
                .add(format!("{prefix}.spatial_kernel"), init.weight(&[1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL]))?,
        })
    }

    fn mlp<T: Element>(&self, g: &mut Graph<T>, p: &Bound, v: Var) -> Result<Var> {
        let row = g.reshape(v, &[1, self.channels])?;
        let h = g.linear(row, p.var(self.mlp_w0), None)?;
        let h = g.relu(h);
        g.linear(h, p.var(self.mlp_w1), None)
    }

    /// `M_c = σ(MLP(avgpool F) + MLP(maxpool F))`, shape `[C,1,1]`.
    pub fn channel_attention<T: Element>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        if g.shape(f).first() != Some(&self.channels) {
            return Err(CmfError::shape(format!("CBAM for {} channels got {:?}", self.channels, g.shape(f))));
        }
        let avg = g.global_pool(f, PoolKind::Avg)?;
        let max = g.global_pool(f, PoolKind::Max)?;
        let a = self.mlp(g, p, avg)?;
        let m = self.mlp(g, p, max)?;
        let s = g.add(a, m)?;
        let gate = g.sigmoid(s);
        g.reshape(gate, &[self.channels, 1, 1])
    }

    /// `M_s = σ(conv7x7([avg_c F; max_c F]))`, shape `[1,H,W]`.
    pub fn spatial_attention<T: Element>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        let avg = g.channel_pool(f, PoolKind::Avg)?;
        let max = g.channel_pool(f, PoolKind::Max)?;
        let stacked = g.concat(&[avg, max], 0)?;
        let pad = SPATIAL_KERNEL / 2;
        let conv =
            g.conv2d(stacked, p.var(self.spatial_kernel), None, ConvParams { padding: pad, ..Default::default() })?;
        Ok(g.sigmoid(conv))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        let mc = self.channel_attention(g, p, f)?;
        let refined = g.mul_broadcast(f, mc)?;
        let ms = self.spatial_attention(g, p, refined)?;
        g.mul_broadcast(refined, ms)
    }

    pub fn zero_weights<T: Element>(&self, store: &mut ParamStore<T>) {
        for id in [self.mlp_w0, self.mlp_w1, self.spatial_kernel] {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(&shape);
        }
    }
}
