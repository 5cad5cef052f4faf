use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::roc::{roc_auc, RocCurve};
use super::stats::{class_confidence_intervals, CiMethod, ConfidenceInterval};
use crate::data::Sample;
use crate::error::{CmfError, Result};
use crate::model::{stack_images, ConMatFormer};
use crate::tensor::{Element, Tensor};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(CmfError::invalid(format!("{} predictions for {} labels", predictions.len(), labels.len())));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= num_classes || l >= num_classes {
                return Err(CmfError::invalid(format!("class index out of range for {num_classes} classes")));
            }
            counts[l][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    pub fn class_metrics(&self, class: usize) -> (f64, f64, f64) {
        let tp = self.counts[class][class];
        let precision = ratio(tp, self.predicted(class));
        let recall = ratio(tp, self.support(class));
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        (precision, recall, f1)
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for n in class_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in class_names.iter().zip(&self.counts) {
            out.push_str(n);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest; absent when the class has no positives or no negatives.
    pub auc: Option<f64>,
    /// Max-softmax confidence over samples predicted as this class.
    pub confidence: Option<ConfidenceInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub roc: Vec<Option<RocCurve>>,
}

impl EvalReport {
    pub fn class_names(&self) -> Vec<String> {
        self.per_class.iter().map(|c| c.name.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `class,threshold,fpr,tpr`, one row per curve point.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("class,threshold,fpr,tpr\n");
        for (c, curve) in self.per_class.iter().zip(&self.roc) {
            for p in curve.iter().flat_map(|r| &r.points) {
                out.push_str(&format!("{},{},{},{}\n", c.name, p.threshold, p.fpr, p.tpr));
            }
        }
        out
    }

    /// Writes `metrics.json`, `confusion.csv` and `roc.csv` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_text(dir.join("metrics.json"), &self.to_json()?)?;
        write_text(dir.join("confusion.csv"), &self.confusion.to_csv(&self.class_names()))?;
        write_text(dir.join("roc.csv"), &self.roc_csv())
    }
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Report from per-sample class probabilities.
pub fn evaluate_probs(probs: &[Vec<f64>], labels: &[usize], class_names: &[String]) -> Result<EvalReport> {
    let k = class_names.len();
    if probs.is_empty() {
        return Err(CmfError::invalid("cannot evaluate an empty sample set"));
    }
    if probs.len() != labels.len() || probs.iter().any(|r| r.len() != k) {
        return Err(CmfError::shape(format!("expected {} rows of {k} probabilities", labels.len())));
    }
    let predictions: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let confusion = ConfusionMatrix::new(&predictions, labels, k)?;
    let loss =
        probs.iter().zip(labels).map(|(r, &l)| -r[l].max(f64::MIN_POSITIVE).ln()).sum::<f64>() / probs.len() as f64;
    let cis = class_confidence_intervals(probs, k, CiMethod::Normal);
    let mut roc = Vec::with_capacity(k);
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let curve = roc_auc(&scores, labels, c).ok();
        let (precision, recall, f1) = confusion.class_metrics(c);
        per_class.push(ClassMetrics {
            name: class_names[c].clone(),
            support: confusion.support(c),
            precision,
            recall,
            f1,
            auc: curve.as_ref().map(|r| r.auc),
            confidence: cis[c],
        });
        roc.push(curve);
    }
    let macro_of = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(EvalReport {
        num_samples: probs.len(),
        loss,
        accuracy: confusion.accuracy(),
        macro_precision: macro_of(|c| c.precision),
        macro_recall: macro_of(|c| c.recall),
        macro_f1: macro_of(|c| c.f1),
        per_class,
        confusion,
        roc,
    })
}

/// Report from raw `[B, K]` logits; the loss uses a stable log-softmax.
pub fn evaluate_logits<T: Element>(logits: &Tensor<T>, labels: &[usize], class_names: &[String]) -> Result<EvalReport> {
    let k = class_names.len();
    if logits.rank() != 2 || logits.shape()[1] != k {
        return Err(CmfError::shape(format!("expected [B, {k}] logits, got {:?}", logits.shape())));
    }
    let mut probs = Vec::with_capacity(labels.len());
    let mut loss = 0.0;
    for (row, &l) in logits.to_f64_vec().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        if l < k {
            loss += z.ln() + m - row[l];
        }
        probs.push(row.iter().map(|v| (v - m).exp() / z).collect());
    }
    let mut report = evaluate_probs(&probs, labels, class_names)?;
    report.loss = loss / labels.len() as f64;
    Ok(report)
}

/// Logits `[N, K]` for every sample, in chunks to bound memory.
pub fn predict_samples<T: Element>(model: &ConMatFormer<T>, samples: &[&Sample]) -> Result<Tensor<T>> {
    let k = model.num_classes();
    let mut out = Vec::with_capacity(samples.len() * k);
    for chunk in samples.chunks(64) {
        let imgs: Vec<Tensor<T>> = chunk.iter().map(|s| s.image.cast()).collect();
        let refs: Vec<&Tensor<T>> = imgs.iter().collect();
        out.extend(model.predict(&stack_images(&refs)?)?.into_vec());
    }
    Ok(Tensor::from_vec(&[samples.len(), k], out))
}

/// Evaluates `model` on `samples` (inference mode).
pub fn evaluate<T: Element>(
    model: &ConMatFormer<T>,
    samples: &[&Sample],
    class_names: &[String],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(CmfError::invalid("cannot evaluate an empty sample set"));
    }
    if class_names.len() != model.num_classes() {
        return Err(CmfError::Config(format!(
            "model has {} classes, dataset has {}",
            model.num_classes(),
            class_names.len()
        )));
    }
    let logits = predict_samples(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    evaluate_logits(&logits, &labels, class_names)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
