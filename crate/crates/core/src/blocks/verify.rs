//! Finite-difference checks for whole blocks: input and every parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamStore};
use crate::autodiff::{grad_check_inputs, GradCheckConfig, Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Worst relative error between analytic and numerical gradients of
/// `Σ r ⊙ f(x)` with respect to `x` and every tensor in `store`, where `r`
/// is a fixed random projection. `max_coords` limits the coordinates sampled
/// per tensor.
pub fn check_block<F>(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    max_coords: Option<usize>,
    seed: u64,
    f: F,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Bound, Var) -> Result<Var>,
{
    let mut inputs = vec![x.clone()];
    inputs.extend(store.tensors().iter().cloned());
    let mut probe = Graph::new();
    let p = store.bind(&mut probe, false);
    let xv = probe.constant(x.clone());
    let probe_out = f(&mut probe, &p, xv)?;
    let out_shape = probe.shape(probe_out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = out_shape.iter().product();
    let proj = Tensor::from_vec(&out_shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let cfg = GradCheckConfig { max_coords, seed, ..Default::default() };
    let report = grad_check_inputs(
        |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = f(g, &p, v[0])?;
            let r = g.constant(proj.clone());
            let prod = g.mul(y, r)?;
            Ok(g.sum(prod))
        },
        &inputs,
        &cfg,
    )?;
    Ok(report.max_rel_error)
}
