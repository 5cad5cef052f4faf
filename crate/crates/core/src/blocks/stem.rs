//! Patchify stem and inter-stage downsampling.

use rand::Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::autodiff::{ConvParams, Graph, Var};
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

pub const PATCH: usize = 4;
pub const LN_EPS: f64 = 1e-6;

/// 4×4 stride-4 convolution from RGB followed by channel LayerNorm.
#[derive(Debug, Clone)]
pub struct Stem {
    pub in_channels: usize,
    pub out_channels: usize,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
}

impl Stem {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        Ok(Self {
            in_channels,
            out_channels,
            conv_w: store.add(format!("{prefix}.conv_w"), init.weight(&[out_channels, in_channels, PATCH, PATCH]))?,
            conv_b: store.add(format!("{prefix}.conv_b"), Tensor::zeros(&[out_channels]))?,
            ln_gamma: store.add(format!("{prefix}.ln_gamma"), Tensor::ones(&[out_channels]))?,
            ln_beta: store.add(format!("{prefix}.ln_beta"), Tensor::zeros(&[out_channels]))?,
        })
    }

    /// Output of the convolution alone, before normalization.
    pub fn patchify<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match *g.shape(x) {
            [c, h, w] if c == self.in_channels && h % PATCH == 0 && w % PATCH == 0 => {}
            ref s => {
                return Err(CmfError::shape(format!(
                    "stem expects [{}, H, W] with H, W divisible by {PATCH}, got {s:?}",
                    self.in_channels
                )))
            }
        }
        let conv = ConvParams { stride: PATCH, ..Default::default() };
        g.conv2d(x, p.var(self.conv_w), Some(p.var(self.conv_b)), conv)
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.patchify(g, p, x)?;
        g.layer_norm(y, 0, p.var(self.ln_gamma), p.var(self.ln_beta), LN_EPS)
    }
}

/// Channel LayerNorm then 2×2 stride-2 convolution doubling the width.
#[derive(Debug, Clone)]
pub struct Downsample {
    pub in_channels: usize,
    pub out_channels: usize,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
}

impl Downsample {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        Ok(Self {
            in_channels,
            out_channels,
            ln_gamma: store.add(format!("{prefix}.ln_gamma"), Tensor::ones(&[in_channels]))?,
            ln_beta: store.add(format!("{prefix}.ln_beta"), Tensor::zeros(&[in_channels]))?,
            conv_w: store.add(format!("{prefix}.conv_w"), init.weight(&[out_channels, in_channels, 2, 2]))?,
            conv_b: store.add(format!("{prefix}.conv_b"), Tensor::zeros(&[out_channels]))?,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match *g.shape(x) {
            [c, h, w] if c == self.in_channels && h % 2 == 0 && w % 2 == 0 && h > 0 => {}
            ref s => {
                return Err(CmfError::shape(format!(
                    "downsample expects [{}, H, W] with even H, W, got {s:?}",
                    self.in_channels
                )))
            }
        }
        let y = g.layer_norm(x, 0, p.var(self.ln_gamma), p.var(self.ln_beta), LN_EPS)?;
        let conv = ConvParams { stride: 2, ..Default::default() };
        g.conv2d(y, p.var(self.conv_w), Some(p.var(self.conv_b)), conv)
    }
}
