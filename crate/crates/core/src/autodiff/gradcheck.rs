//! Central finite-difference verification of analytic adjoints.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{CmfError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Floor added to the relative-error denominator. Coordinates whose true
    /// gradient is zero (e.g. a softmax shift direction) produce numerical
    /// noise near 1e-11, so the floor sits well above that.
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, eps: 1e-6, max_coords: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst error for each input, in argument order.
    pub per_input: Vec<f64>,
    pub coords_checked: usize,
}

/// Maximum over elements of `|a - n| / (|a| + |n| + eps)` where `a` is the
/// adjoint from [`Graph::backward`] and `n` the central difference
/// `(f(x + h·e) - f(x - h·e)) / 2h`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let cfg = GradCheckConfig { step, ..GradCheckConfig::default() };
    let report = grad_check_inputs(|g, vars| f(g, vars[0]), std::slice::from_ref(x), &cfg)?;
    Ok(report.max_rel_error)
}

/// Multi-input form of [`grad_check`]; every input is differentiated.
pub fn grad_check_inputs<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if cfg.step <= 0.0 {
        return Err(CmfError::invalid(format!("finite-difference step must be positive, got {}", cfg.step)));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(CmfError::Autodiff(format!("grad_check needs a scalar function, got shape {:?}", g.shape(out))));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();

    let eval = |point: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    let mut point: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &c in &coords {
            let orig = input.data()[c];
            point[i].data_mut()[c] = orig + cfg.step;
            let plus = eval(&point)?;
            point[i].data_mut()[c] = orig - cfg.step;
            let minus = eval(&point)?;
            point[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[i].data()[c];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + cfg.eps);
            worst = worst.max(err);
        }
        checked += coords.len();
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, per_input, coords_checked: checked })
}
