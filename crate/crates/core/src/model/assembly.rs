use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::config::ModelConfig;
use crate::autodiff::{Graph, PoolKind, Var};
use crate::blocks::{Bound, Cbam, ConvNextBlock, Danet, Downsample, Init, ParamId, ParamStore, Stem, TransformerBlock};
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};
use crate::CmfRng;

pub const HEAD_LN_EPS: f64 = 1e-6;

/// Named points in the network whose activations can be captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tap {
    Stem,
    /// Output of stage 1..=5 (stage 5 exists only with the transformer).
    Stage(usize),
    /// Pooled, normalized feature vector fed to the classifier.
    Pooled,
}

impl Tap {
    pub fn name(self) -> String {
        match self {
            Tap::Stem => "stem".into(),
            Tap::Stage(i) => format!("stage{i}"),
            Tap::Pooled => "pool".into(),
        }
    }
}

impl std::str::FromStr for Tap {
    type Err = CmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stem" => Ok(Tap::Stem),
            "pool" => Ok(Tap::Pooled),
            _ => s
                .strip_prefix("stage")
                .and_then(|n| n.parse().ok())
                .filter(|n| (1..=5).contains(n))
                .map(Tap::Stage)
                .ok_or_else(|| CmfError::Config(format!("unknown layer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub downsample: Option<Downsample>,
    pub blocks: Vec<ConvNextBlock>,
    pub cbam: Option<Cbam>,
    pub danet: Option<Danet>,
}

#[derive(Debug, Clone)]
pub struct StageFive {
    pub block: TransformerBlock,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
}

/// The assembled classifier: parameters plus the module graph that indexes
/// into them.
#[derive(Debug, Clone)]
pub struct ConMatFormer<T: Element> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub stem: Stem,
    pub stages: Vec<Stage>,
    pub stage5: Option<StageFive>,
    pub head_ln_gamma: ParamId,
    pub head_ln_beta: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Result of one image's forward pass.
#[derive(Debug, Clone)]
pub struct ImageForward {
    /// `[1, num_classes]`
    pub logits: Var,
    /// Every available tap in network order.
    pub taps: Vec<(Tap, Var)>,
}

impl ImageForward {
    pub fn tap(&self, tap: Tap) -> Option<Var> {
        self.taps.iter().find(|(t, _)| *t == tap).map(|&(_, v)| v)
    }
}

/// Builds a model with freshly initialized parameters.
pub fn build_model<T: Element, R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<ConMatFormer<T>> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init::new(rng);
    let dims = config.stage_dims;
    let stem = Stem::new(&mut store, "stem", 3, dims[0], &mut init)?;
    let mut stages = Vec::with_capacity(4);
    for (i, (&dim, &depth)) in dims.iter().zip(&config.stage_depths).enumerate() {
        let prefix = format!("stage{}", i + 1);
        let downsample = if i == 0 {
            None
        } else {
            Some(Downsample::new(&mut store, &format!("{prefix}.down"), dims[i - 1], dim, &mut init)?)
        };
        let blocks = (0..depth)
            .map(|b| ConvNextBlock::new(&mut store, &format!("{prefix}.block{b}"), dim, config.use_grn, &mut init))
            .collect::<Result<Vec<_>>>()?;
        let cbam = if i < 3 && config.use_cbam[i] {
            Some(Cbam::new(&mut store, &format!("{prefix}.cbam"), dim, config.cbam_reduction, &mut init)?)
        } else {
            None
        };
        let danet = if i == 3 && config.use_danet {
            Some(Danet::new(&mut store, &format!("{prefix}.danet"), dim, &mut init)?)
        } else {
            None
        };
        stages.push(Stage { downsample, blocks, cbam, danet });
    }
    let d = dims[3];
    let stage5 = if config.use_transformer {
        let side = config.stage_sizes()[3];
        let pos = config.pos_embed.then_some(side * side);
        let block =
            TransformerBlock::new(&mut store, "stage5.transformer", d, config.heads, config.dropout, pos, &mut init)?;
        Some(StageFive {
            block,
            ln_gamma: store.add("stage5.ln_gamma", Tensor::ones(&[d]))?,
            ln_beta: store.add("stage5.ln_beta", Tensor::zeros(&[d]))?,
        })
    } else {
        None
    };
    let head_ln_gamma = store.add("head.ln_gamma", Tensor::ones(&[d]))?;
    let head_ln_beta = store.add("head.ln_beta", Tensor::zeros(&[d]))?;
    let head_w = store.add("head.fc_w", init.weight(&[d, config.num_classes]))?;
    let head_b = store.add("head.fc_b", Tensor::zeros(&[config.num_classes]))?;
    Ok(ConMatFormer {
        config: config.clone(),
        params: store,
        stem,
        stages,
        stage5,
        head_ln_gamma,
        head_ln_beta,
        head_w,
        head_b,
    })
}

impl<T: Element> ConMatFormer<T> {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    pub fn param_count(&self) -> usize {
        self.params.total_params()
    }

    /// Same model with parameters converted to another element type.
    pub fn cast<U: Element>(&self) -> ConMatFormer<U> {
        ConMatFormer {
            config: self.config.clone(),
            params: self.params.cast(),
            stem: self.stem.clone(),
            stages: self.stages.clone(),
            stage5: self.stage5.clone(),
            head_ln_gamma: self.head_ln_gamma,
            head_ln_beta: self.head_ln_beta,
            head_w: self.head_w,
            head_b: self.head_b,
        }
    }

    /// Forward pass of one `[3, S, S]` image. `rng` enables dropout.
    pub fn forward_image<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        mut rng: Option<&mut R>,
    ) -> Result<ImageForward> {
        let s = self.config.input_size;
        if g.shape(x) != [3, s, s] {
            return Err(CmfError::shape(format!("model expects [3, {s}, {s}], got {:?}", g.shape(x))));
        }
        let mut taps = Vec::with_capacity(7);
        let mut h = self.stem.forward(g, p, x)?;
        g.check_finite("stem")?;
        taps.push((Tap::Stem, h));
        for (i, stage) in self.stages.iter().enumerate() {
            if let Some(down) = &stage.downsample {
                h = down.forward(g, p, h)?;
            }
            for block in &stage.blocks {
                h = block.forward(g, p, h)?;
            }
            if let Some(cbam) = &stage.cbam {
                h = cbam.forward(g, p, h)?;
            }
            if let Some(danet) = &stage.danet {
                h = danet.forward(g, p, h)?;
            }
            g.check_finite(&format!("stage{}", i + 1))?;
            taps.push((Tap::Stage(i + 1), h));
        }
        if let Some(s5) = &self.stage5 {
            h = s5.block.forward(g, p, h, rng.as_deref_mut())?;
            h = g.layer_norm(h, 0, p.var(s5.ln_gamma), p.var(s5.ln_beta), HEAD_LN_EPS)?;
            h = g.dropout(h, self.config.dropout, rng.as_deref_mut())?;
            g.check_finite("stage5")?;
            taps.push((Tap::Stage(5), h));
        }
        let pooled = g.global_pool(h, PoolKind::Avg)?;
        let pooled = g.layer_norm(pooled, 0, p.var(self.head_ln_gamma), p.var(self.head_ln_beta), HEAD_LN_EPS)?;
        taps.push((Tap::Pooled, pooled));
        let row = g.reshape(pooled, &[1, self.config.stage_dims[3]])?;
        let logits = g.linear(row, p.var(self.head_w), Some(p.var(self.head_b)))?;
        g.check_finite("head")?;
        Ok(ImageForward { logits, taps })
    }

    /// Logits `[B, K]` for a `[B, 3, S, S]` batch; each image runs through
    /// the network on its own, then rows are stacked.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        batch: Var,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let shape = g.shape(batch).to_vec();
        let s = self.config.input_size;
        if shape.len() != 4 || shape[1..] != [3, s, s] || shape[0] == 0 {
            return Err(CmfError::shape(format!("model expects [B, 3, {s}, {s}], got {shape:?}")));
        }
        let mut rows = Vec::with_capacity(shape[0]);
        for b in 0..shape[0] {
            let one = g.narrow(batch, 0, b, 1)?;
            let img = g.reshape(one, &[3, s, s])?;
            rows.push(self.forward_image(g, p, img, rng.as_deref_mut())?.logits);
        }
        g.concat(&rows, 0)
    }

    /// Inference logits `[B, K]`, images evaluated in parallel.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let images = split_batch(batch, self.config.input_size)?;
        let rows: Vec<Vec<T>> = images
            .par_iter()
            .map(|img| {
                let mut g = Graph::new();
                let p = self.params.bind(&mut g, false);
                let x = g.constant(img.clone());
                let out = self.forward_image(&mut g, &p, x, None::<&mut CmfRng>)?;
                Ok(g.value(out.logits).data().to_vec())
            })
            .collect::<Result<_>>()?;
        let k = self.config.num_classes;
        Ok(Tensor::from_vec(&[rows.len(), k], rows.concat()))
    }

    /// Row-wise softmax of [`predict`](Self::predict).
    pub fn predict_proba(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.predict(batch)?;
        Ok(softmax_rows(&logits))
    }

    /// Output shape at every tap for a zero image, in network order, ending
    /// with the per-image logits.
    pub fn shape_trace(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let s = self.config.input_size;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[3, s, s]));
        let out = self.forward_image(&mut g, &p, x, None::<&mut CmfRng>)?;
        let mut trace: Vec<(String, Vec<usize>)> =
            out.taps.iter().map(|&(t, v)| (t.name(), g.shape(v).to_vec())).collect();
        trace.push(("head".into(), vec![self.config.num_classes]));
        Ok(trace)
    }
}

/// Splits `[B, 3, S, S]` into `B` images of `[3, S, S]`.
pub fn split_batch<T: Element>(batch: &Tensor<T>, size: usize) -> Result<Vec<Tensor<T>>> {
    let shape = batch.shape();
    if shape.len() != 4 || shape[1..] != [3, size, size] {
        return Err(CmfError::shape(format!("expected [B, 3, {size}, {size}], got {shape:?}")));
    }
    let n = 3 * size * size;
    Ok(batch.data().chunks(n).map(|c| Tensor::from_vec(&[3, size, size], c.to_vec())).collect())
}

/// Stacks `[3, S, S]` images into a batch.
pub fn stack_images<T: Element>(images: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| CmfError::invalid("cannot stack an empty batch"))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.shape() != shape.as_slice() {
            return Err(CmfError::shape(format!("batch mixes {:?} and {shape:?}", img.shape())));
        }
        data.extend_from_slice(img.data());
    }
    let mut full = vec![images.len()];
    full.extend(shape);
    Ok(Tensor::from_vec(&full, data))
}

pub fn softmax_rows<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k.max(1)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Seeded model construction.
pub fn build_seeded<T: Element>(config: &ModelConfig, seed: u64) -> Result<ConMatFormer<T>> {
    let mut rng = CmfRng::seed_from_u64(seed);
    build_model(config, &mut rng)
}
