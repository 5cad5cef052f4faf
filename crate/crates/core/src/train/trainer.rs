use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::autodiff::Graph;
use crate::blocks::ParamStore;
use crate::data::Sample;
use crate::error::{CmfError, Result};
use crate::eval::{evaluate, write_text};
use crate::model::ConMatFormer;
use crate::tensor::{Element, Tensor};
use crate::CmfRng;

/// Samples whose gradients are held in memory at once. Reduction order is
/// fixed regardless of thread count.
const GRAD_CHUNK: usize = 16;
const DROPOUT_SALT: u64 = 0xd20f_0a7e_5eed_0001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decoupled_weight_decay: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-5,
            weight_decay: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            decoupled_weight_decay: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            decoupled: self.decoupled_weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CmfError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        for (name, v) in [("lr", self.lr), ("weight_decay", self.weight_decay), ("adam_eps", self.adam_eps)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode forward passes (dropout on).
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_macro_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `epoch,train_loss,train_accuracy,val_loss,val_accuracy,val_macro_f1`;
    /// wall time is left out so reruns produce identical files.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,val_macro_f1\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                opt(r.val_loss),
                opt(r.val_accuracy),
                opt(r.val_macro_f1)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Element> {
    pub history: TrainHistory,
    /// 1-based epoch whose parameters are kept in `best_params`.
    pub best_epoch: usize,
    pub best_params: ParamStore<T>,
}

/// Trains `model` in place; its parameters end at the last epoch. The best
/// epoch (highest validation accuracy, then lowest validation loss; training
/// figures when `val` is empty) is returned alongside.
pub fn train<T: Element>(
    model: &mut ConMatFormer<T>,
    train: &[&Sample],
    val: &[&Sample],
    class_names: &[String],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(model, train, val, class_names, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Element>(
    model: &mut ConMatFormer<T>,
    train: &[&Sample],
    val: &[&Sample],
    class_names: &[String],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(CmfError::Data("training split is empty".into()));
    }
    let k = model.num_classes();
    if let Some(s) = train.iter().chain(val).find(|s| s.label >= k) {
        return Err(CmfError::Data(format!("{}: label {} out of range for {k} classes", s.source_path, s.label)));
    }
    let images: Vec<Tensor<T>> = train.iter().map(|s| s.image.cast()).collect();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let adam = config.adam();
    let mut state = AdamState::new(model.params.tensors());
    let mut history = TrainHistory::default();
    let mut best: Option<((f64, f64), usize, ParamStore<T>)> = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut shuffle_rng = CmfRng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut losses = vec![0.0; images.len()];
        let mut correct = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let stream_base = ((epoch as u64) << 32) | (b * config.batch_size) as u64;
            let step = batch_gradients(model, &images, &labels, batch, config.seed, stream_base)
                .map_err(|e| annotate(e, epoch, b))?;
            for (&i, &l) in batch.iter().zip(&step.losses) {
                losses[i] = l;
            }
            correct += step.correct;
            adam_step(model.params.tensors_mut(), &step.grads, &mut state, &adam)?;
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let train_accuracy = correct as f64 / images.len() as f64;
        let (val_loss, val_accuracy, val_macro_f1) = if val.is_empty() {
            (None, None, None)
        } else {
            let r = evaluate(model, val, class_names)?;
            (Some(r.loss), Some(r.accuracy), Some(r.macro_f1))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            val_macro_f1,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: loss {train_loss:.4} acc {train_accuracy:.3}{}",
            config.epochs,
            val_accuracy.map(|a| format!(" val_acc {a:.3}")).unwrap_or_default()
        );
        let key = match (val_accuracy, val_loss) {
            (Some(a), Some(l)) => (a, -l),
            _ => (train_accuracy, -train_loss),
        };
        if best.as_ref().map_or(true, |(b, _, _)| key.0 > b.0 || (key.0 == b.0 && key.1 > b.1)) {
            best = Some((key, epoch, model.params.clone()));
        }
        on_epoch(&record);
        history.records.push(record);
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome { history, best_epoch, best_params })
}

fn annotate(e: CmfError, epoch: usize, batch: usize) -> CmfError {
    match e {
        CmfError::NonFinite(m) => CmfError::NonFinite(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

struct BatchStep<T: Element> {
    grads: Vec<Tensor<T>>,
    losses: Vec<f64>,
    correct: usize,
}

/// Mean cross-entropy gradient over `batch`. Every sample runs on its own
/// graph with its own dropout stream.
fn batch_gradients<T: Element>(
    model: &ConMatFormer<T>,
    images: &[Tensor<T>],
    labels: &[usize],
    batch: &[usize],
    seed: u64,
    stream_base: u64,
) -> Result<BatchStep<T>> {
    let mut grads: Vec<Tensor<T>> = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut losses = Vec::with_capacity(batch.len());
    let mut correct = 0;
    for (c, chunk) in batch.chunks(GRAD_CHUNK).enumerate() {
        let results = chunk
            .par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let mut rng = CmfRng::seed_from_u64(seed ^ DROPOUT_SALT);
                rng.set_stream(stream_base + (c * GRAD_CHUNK + j) as u64);
                sample_gradient(model, &images[i], labels[i], &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        for (loss, hit, g) in results {
            losses.push(loss);
            correct += usize::from(hit);
            for (acc, gi) in grads.iter_mut().zip(&g) {
                for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                    *a += b;
                }
            }
        }
    }
    let inv = T::one() / T::of(batch.len() as f64);
    for g in &mut grads {
        for v in g.data_mut() {
            *v *= inv;
        }
        if !g.is_finite() {
            return Err(CmfError::NonFinite("parameter gradient".into()));
        }
    }
    Ok(BatchStep { grads, losses, correct })
}

fn sample_gradient<T: Element>(
    model: &ConMatFormer<T>,
    image: &Tensor<T>,
    label: usize,
    rng: &mut CmfRng,
) -> Result<(f64, bool, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let x = g.constant(image.clone());
    let out = model.forward_image(&mut g, &p, x, Some(rng))?;
    let hit = g.value(out.logits).argmax() == label;
    let loss = g.cross_entropy(out.logits, &[label])?;
    let value = g.value(loss).item()?.as_f64();
    if !value.is_finite() {
        return Err(CmfError::NonFinite(format!("loss is {value}")));
    }
    g.backward(loss)?;
    Ok((value, hit, model.params.grads(&g, &p)))
}
