//! Image ingestion, stratified splitting, augmentation and class balancing.

mod augment;
mod balance;
mod load;
mod manifest;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

pub use augment::{
    augment_image, flip_horizontal, flip_vertical, resize_bilinear, rotate, warp_affine, AugmentParams, AugmentSpec,
    FLIP_PROBABILITIES, ROTATION_DEGREES,
};
pub use balance::{balance_classes, binary_targets, dfuc2021_targets, resolve_targets, BalanceTargets};
pub use load::{decode_image, load_dataset, LoadOptions, IMAGE_EXTENSIONS};
pub use manifest::{manifest_rows, read_shard, write_manifest, write_shard, ManifestRow};
pub use split::{kfold_assign, stratified_split, DatasetSplit, MIN_CLASS_SIZE};
pub use synth::{synthetic_blobs, write_image_png, write_synthetic_tree};

use crate::error::{CmfError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = CmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(CmfError::Data(format!("unknown split {s:?}"))),
        }
    }
}

/// One labeled image. `image` is `[3, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
    pub source_path: String,
    /// Index (within the same sample list) of the original this copy was
    /// augmented from.
    pub augmented_from: Option<usize>,
    pub split: Option<Split>,
    pub fold: Option<usize>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, label: usize, source_path: impl Into<String>) -> Self {
        Self { image, label, source_path: source_path.into(), augmented_from: None, split: None, fold: None }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Sorted; a sample's label indexes this list.
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    /// Files that could not be decoded.
    pub skipped: usize,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.samples, self.num_classes())
    }

    /// Marks every sample with its split from `split`.
    pub fn assign_split(&mut self, split: &DatasetSplit) {
        for (ids, which) in [(&split.train, Split::Train), (&split.val, Split::Val), (&split.test, Split::Test)] {
            for &i in ids {
                self.samples[i].split = Some(which);
            }
        }
    }

    pub fn by_split(&self, which: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == Some(which)).collect()
    }
}

pub fn class_counts(samples: &[Sample], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for s in samples {
        if s.label < num_classes {
            counts[s.label] += 1;
        }
    }
    counts
}
