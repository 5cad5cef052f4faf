use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::augment::resize_bilinear;
use super::{Dataset, Sample};
use crate::error::{CmfError, Result};
use crate::tensor::Tensor;

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "ppm"];

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Resize every image to `size × size` at load time.
    pub resize: Option<usize>,
}

/// Decodes a file to a `[3, H, W]` tensor in `[0, 1]`. Grayscale and alpha
/// images are converted to RGB.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data))
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Loads `root/<class>/<image>`. Class names are sorted to fix label order;
/// files are visited in sorted order. Undecodable files are skipped with a
/// warning and counted in [`Dataset::skipped`].
pub fn load_dataset(root: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let root = root.as_ref();
    let mut classes: Vec<(String, PathBuf)> = fs::read_dir(root)
        .map_err(|e| CmfError::Data(format!("cannot read {}: {e}", root.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(CmfError::Data(format!("no class directories under {}", root.display())));
    }

    let mut files = Vec::new();
    for (label, (name, dir)) in classes.iter().enumerate() {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(CmfError::Data(format!("class directory {name:?} has no images")));
        }
        files.extend(entries.into_iter().map(|p| (label, p)));
    }

    let decoded: Vec<Option<Sample>> = files
        .par_iter()
        .map(|(label, path)| {
            let img = decode_image(path).and_then(|img| match options.resize {
                Some(s) => resize_bilinear(&img, s, s),
                None => Ok(img),
            });
            match img {
                Ok(img) => Some(Sample::new(img, *label, path.to_string_lossy())),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    None
                }
            }
        })
        .collect();
    let skipped = decoded.iter().filter(|s| s.is_none()).count();
    let samples: Vec<Sample> = decoded.into_iter().flatten().collect();
    let class_names: Vec<String> = classes.into_iter().map(|(n, _)| n).collect();
    for (label, name) in class_names.iter().enumerate() {
        if !samples.iter().any(|s| s.label == label) {
            return Err(CmfError::Data(format!("class {name:?} has no decodable images")));
        }
    }
    Ok(Dataset { class_names, samples, skipped })
}
