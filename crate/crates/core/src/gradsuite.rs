//! The gradient-integrity suite: every primitive, every block and the
//! reduced-scale model against central finite differences at 64-bit.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::autodiff::{grad_check_inputs, ConvParams, GradCheckConfig, Graph, Var};
use crate::blocks::{
    check_block, Bound, Cbam, ConvNextBlock, Danet, Downsample, Init, ParamStore, Stem, TransformerBlock,
};
use crate::error::Result;
use crate::model::{build_seeded, ConMatFormer, ModelConfig};
use crate::tensor::Tensor;
use crate::CmfRng;

pub const BLOCK_LIMIT: f64 = 1e-4;
pub const MODEL_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub limit: f64,
    pub passed: bool,
    pub seconds: f64,
}

fn random(shape: &[usize], rng: &mut CmfRng, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn projected(g: &mut Graph<f64>, y: Var, proj: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(proj.clone());
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut CmfRng) {
    for t in store.tensors_mut() {
        *t = random(t.shape(), rng, 0.5);
    }
}

fn entry(name: &str, limit: f64, f: impl FnOnce() -> Result<f64>) -> Result<GradCheckEntry> {
    let start = Instant::now();
    let err = f()?;
    Ok(GradCheckEntry {
        name: name.into(),
        max_rel_error: err,
        limit,
        passed: err < limit,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn op_check(inputs: Vec<Tensor<f64>>, seed: u64, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut probe = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let y = f(&mut probe, &vars)?;
    let mut rng = CmfRng::seed_from_u64(seed ^ 0x5eed);
    let proj = random(probe.shape(y), &mut rng, 1.0);
    let report = grad_check_inputs(
        |g, v| {
            let y = f(g, v)?;
            projected(g, y, &proj)
        },
        &inputs,
        &GradCheckConfig::default(),
    )?;
    Ok(report.max_rel_error)
}

/// Parameters of a freshly built model moved away from the degenerate
/// initial state (layer scale 1e-6, zero attention scales) so that every
/// branch carries gradient.
pub fn perturbed_model(config: &ModelConfig, seed: u64) -> Result<ConMatFormer<f64>> {
    let mut model = build_seeded::<f64>(config, seed)?;
    let mut rng = CmfRng::seed_from_u64(seed.wrapping_add(1));
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let t = model.params.by_name_mut(&name).expect("name from store");
        let tail = name.rsplit('.').next().unwrap_or("");
        let fresh = match tail {
            "layer_scale" => Some(random(t.shape(), &mut rng, 1.0).map(|v| 0.5 + 0.5 * v.abs())),
            "alpha" | "beta" | "grn_gamma" | "grn_beta" => Some(random(t.shape(), &mut rng, 0.5)),
            _ if tail.ends_with("_b") || tail.starts_with('b') && tail.len() == 2 || tail.ends_with("bias") => {
                Some(random(t.shape(), &mut rng, 0.1))
            }
            _ => None,
        };
        if let Some(v) = fresh {
            *t = v;
        }
    }
    Ok(model)
}

/// End-to-end check of cross-entropy loss with respect to the image and
/// all parameters, sampling at most `max_coords` coordinates per tensor.
pub fn model_grad_check(model: &ConMatFormer<f64>, seed: u64, max_coords: usize) -> Result<f64> {
    let s = model.config.input_size;
    let mut rng = CmfRng::seed_from_u64(seed);
    let image = random(&[3, s, s], &mut rng, 1.0).map(|v| 0.5 + 0.5 * v);
    let label = rng.gen_range(0..model.config.num_classes);
    let mut inputs = vec![image];
    inputs.extend(model.params.tensors().iter().cloned());
    let cfg = GradCheckConfig { max_coords: Some(max_coords), seed, ..Default::default() };
    let report = grad_check_inputs(
        |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let out = model.forward_image(g, &p, v[0], None::<&mut CmfRng>)?;
            g.cross_entropy(out.logits, &[label])
        },
        &inputs,
        &cfg,
    )?;
    Ok(report.max_rel_error)
}

/// Runs the whole suite with the desk-scale model as the end-to-end entry.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    run_gradient_suite_for(seed, &ModelConfig::desk(), 4)
}

/// Every entry is independent and seeded from `seed`; the last one checks
/// `model` end to end, sampling `max_coords` coordinates per tensor.
pub fn run_gradient_suite_for(seed: u64, model: &ModelConfig, max_coords: usize) -> Result<Vec<GradCheckEntry>> {
    let mut rng = CmfRng::seed_from_u64(seed);
    let mut out = Vec::new();

    let x = random(&[3, 5, 5], &mut rng, 1.0);
    let w = random(&[4, 3, 3, 3], &mut rng, 0.5);
    let b = random(&[4], &mut rng, 0.5);
    out.push(entry("conv2d", BLOCK_LIMIT, || {
        op_check(vec![x.clone(), w, b], seed, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), ConvParams { padding: 1, ..Default::default() })
        })
    })?);
    let xn = random(&[4, 3, 3], &mut rng, 1.0);
    let gamma = random(&[4], &mut rng, 1.0);
    let beta = random(&[4], &mut rng, 1.0);
    out.push(entry("layer_norm", BLOCK_LIMIT, || {
        op_check(vec![xn.clone(), gamma, beta], seed, |g, v| g.layer_norm(v[0], 0, v[1], v[2], 1e-6))
    })?);
    out.push(entry("gelu", BLOCK_LIMIT, || op_check(vec![xn.clone()], seed, |g, v| Ok(g.gelu(v[0]))))?);
    out.push(entry("softmax", BLOCK_LIMIT, || op_check(vec![xn.clone()], seed, |g, v| g.softmax(v[0], 2)))?);

    let mut block_rng = CmfRng::seed_from_u64(seed.wrapping_add(17));
    {
        let mut store = ParamStore::new();
        let cbam = Cbam::new(&mut store, "cbam", 8, 4, &mut Init::new(&mut block_rng))?;
        randomize(&mut store, &mut block_rng);
        let x = random(&[8, 5, 5], &mut block_rng, 1.0);
        out.push(entry("cbam", BLOCK_LIMIT, || check_block(&store, &x, None, seed, |g, p, x| cbam.forward(g, p, x)))?);
    }
    {
        let mut store = ParamStore::new();
        let danet = Danet::new(&mut store, "danet", 4, &mut Init::new(&mut block_rng))?;
        randomize(&mut store, &mut block_rng);
        let x = random(&[4, 3, 3], &mut block_rng, 1.0);
        out.push(entry("pam", BLOCK_LIMIT, || {
            check_block(&store, &x, None, seed, |g, p, x| danet.position_attention(g, p, x))
        })?);
        out.push(entry("cam", BLOCK_LIMIT, || {
            check_block(&store, &x, None, seed, |g, p, x| danet.channel_attention(g, p, x))
        })?);
    }
    for (name, grn) in [("convnext_block", false), ("convnext_block_grn", true)] {
        let mut store = ParamStore::new();
        let block = ConvNextBlock::new(&mut store, "blk", 4, grn, &mut Init::new(&mut block_rng))?;
        randomize(&mut store, &mut block_rng);
        let x = random(&[4, 5, 5], &mut block_rng, 1.0);
        out.push(entry(name, BLOCK_LIMIT, || {
            check_block(&store, &x, Some(60), seed, |g, p, x| block.forward(g, p, x))
        })?);
    }
    {
        let mut store = ParamStore::new();
        let t = TransformerBlock::new(&mut store, "t", 8, 2, 0.1, None, &mut Init::new(&mut block_rng))?;
        randomize(&mut store, &mut block_rng);
        let x = random(&[8, 2, 2], &mut block_rng, 1.0);
        out.push(entry("transformer_block", BLOCK_LIMIT, || {
            check_block(&store, &x, Some(60), seed, |g, p, x| t.forward(g, p, x, None::<&mut CmfRng>))
        })?);
    }
    {
        let mut store = ParamStore::new();
        let stem = Stem::new(&mut store, "stem", 3, 4, &mut Init::new(&mut block_rng))?;
        let down = Downsample::new(&mut store, "down", 4, 8, &mut Init::new(&mut block_rng))?;
        randomize(&mut store, &mut block_rng);
        let x = random(&[3, 8, 8], &mut block_rng, 1.0);
        out.push(entry("stem_downsample", BLOCK_LIMIT, || {
            check_block(&store, &x, Some(60), seed, |g, p, x| {
                let y = stem.forward(g, p, x)?;
                down.forward(g, p, y)
            })
        })?);
    }
    {
        let config = ModelConfig { dropout: 0.0, ..model.clone() };
        let model = perturbed_model(&config, seed)?;
        out.push(entry("model", MODEL_LIMIT, || model_grad_check(&model, seed, max_coords))?);
    }
    Ok(out)
}
