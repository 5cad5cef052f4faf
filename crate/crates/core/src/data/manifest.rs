use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{CmfError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: usize,
    pub split: String,
    pub fold: Option<usize>,
    pub augmented_from: Option<usize>,
}

pub fn manifest_rows(samples: &[Sample]) -> Vec<ManifestRow> {
    samples
        .iter()
        .map(|s| ManifestRow {
            path: s.source_path.clone(),
            label: s.label,
            split: s.split.map(|x| x.to_string()).unwrap_or_default(),
            fold: s.fold,
            augmented_from: s.augmented_from,
        })
        .collect()
}

/// CSV with header `path,label,split,fold,augmented_from`; absent values
/// are empty fields.
pub fn write_manifest<W: Write>(samples: &[Sample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in manifest_rows(samples) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Packs images (`[N, 3, H, W]`) followed by labels (`[N]`) as two tensor
/// records in one file.
pub fn write_shard(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let first = samples.first().ok_or_else(|| CmfError::Data("cannot write an empty shard".into()))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.numel());
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(CmfError::Data(format!("shard mixes image shapes {:?} and {shape:?}", s.image.shape())));
        }
        data.extend_from_slice(s.image.data());
    }
    let mut full = vec![samples.len()];
    full.extend(&shape);
    let images = Tensor::from_vec(&full, data);
    let labels = Tensor::from_vec(&[samples.len()], samples.iter().map(|s| s.label as f32).collect());
    let mut w = BufWriter::new(File::create(path)?);
    images.write_to(&mut w)?;
    labels.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut r = BufReader::new(File::open(path)?);
    let images = Tensor::<f32>::read_from(&mut r)?;
    let labels = Tensor::<f32>::read_from(&mut r)?;
    if images.shape().first() != labels.shape().first() {
        return Err(CmfError::Format("shard image and label counts differ".into()));
    }
    Ok((images, labels.data().iter().map(|&l| l as usize).collect()))
}
