use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{write_text, EvalReport};
use super::stats::{mean, sample_std};
use crate::data::kfold_assign;
use crate::error::{CmfError, Result};

pub const CV_METRICS: [&str; 4] = ["accuracy", "macro_precision", "macro_recall", "macro_f1"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Vec<f64>,
    /// Digest of the fold's trained parameters.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub metric_names: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CvSummary {
    pub fn from_folds(metric_names: Vec<String>, folds: Vec<FoldResult>) -> Result<Self> {
        if folds.iter().any(|f| f.metrics.len() != metric_names.len()) {
            return Err(CmfError::invalid("fold metric count does not match metric names"));
        }
        let column = |i: usize| folds.iter().map(|f| f.metrics[i]).collect::<Vec<_>>();
        let mean = (0..metric_names.len()).map(|i| mean(&column(i))).collect();
        let std = (0..metric_names.len()).map(|i| sample_std(&column(i))).collect();
        Ok(Self { metric_names, folds, mean, std })
    }

    pub fn metric(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.metric_names.iter().position(|n| n == name)?;
        Some(self.folds.iter().map(|f| f.metrics[i]).collect())
    }

    /// One row per fold, then `mean` and `std` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["fold".to_string()];
        header.extend(self.metric_names.iter().cloned());
        header.push("checksum".into());
        w.write_record(&header)?;
        for f in &self.folds {
            let mut row = vec![f.fold.to_string()];
            row.extend(f.metrics.iter().map(|v| v.to_string()));
            row.push(f.checksum.clone());
            w.write_record(&row)?;
        }
        for (label, values) in [("mean", &self.mean), ("std", &self.std)] {
            let mut row = vec![label.to_string()];
            row.extend(values.iter().map(|v| v.to_string()));
            row.push(String::new());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| CmfError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CmfError::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_csv()?)
    }

    /// Reads the fold rows back; summary rows are recomputed.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("fold") {
            return Err(CmfError::Data(format!("{}: first column must be \"fold\"", path.display())));
        }
        let has_checksum = header.last().map(String::as_str) == Some("checksum");
        let metric_end = if has_checksum { header.len() - 1 } else { header.len() };
        let mut folds = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let Ok(fold) = rec[0].trim().parse::<usize>() else { continue };
            let metrics = (1..metric_end)
                .map(|i| {
                    rec[i].trim().parse::<f64>().map_err(|_| {
                        CmfError::Data(format!(
                            "{}: fold {fold} column {:?} is not a number",
                            path.display(),
                            header[i]
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            let checksum = if has_checksum { rec[metric_end].to_string() } else { String::new() };
            folds.push(FoldResult { fold, metrics, checksum });
        }
        if folds.is_empty() {
            return Err(CmfError::Data(format!("{}: no fold rows", path.display())));
        }
        Self::from_folds(header[1..metric_end].to_vec(), folds)
    }
}

/// Output of training and evaluating one fold.
pub struct FoldOutcome {
    pub report: EvalReport,
    pub checksum: String,
}

/// Stratified `k`-fold cross-validation. `train_fn(fold, train, test)`
/// receives sample indices; folds run in parallel and are reported in
/// order.
pub fn kfold_cv<F>(labels: &[usize], k: usize, seed: u64, train_fn: F) -> Result<CvSummary>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<FoldOutcome> + Sync,
{
    let assignment = kfold_assign(labels, k, seed)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == fold);
            let out = train_fn(fold, &train, &test)?;
            let r = &out.report;
            Ok(FoldResult {
                fold,
                metrics: vec![r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1],
                checksum: out.checksum,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CvSummary::from_folds(CV_METRICS.iter().map(|s| s.to_string()).collect(), folds)
}
