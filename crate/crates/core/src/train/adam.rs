use serde::{Deserialize, Serialize};

use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Shrink parameters directly instead of adding `weight_decay · θ` to
    /// the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 3e-5, decoupled: false }
    }
}

/// Moment estimates for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element> {
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CmfError::invalid(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1, b2, c1, c2) = (T::of(b1), T::of(b2), T::of(c1), T::of(c2));
    let (lr, eps, wd) = (T::of(config.lr), T::of(config.eps), T::of(config.weight_decay));
    let one = T::one();
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(CmfError::shape(format!("adam: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        let pd = p.data_mut();
        for (((theta, &grad), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let grad = if config.decoupled { grad } else { grad + wd * *theta };
            *mi = b1 * *mi + (one - b1) * grad;
            *vi = b2 * *vi + (one - b2) * grad * grad;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            let mut step = lr * m_hat / (v_hat.sqrt() + eps);
            if config.decoupled {
                step += lr * wd * *theta;
            }
            *theta -= step;
        }
    }
    Ok(())
}
