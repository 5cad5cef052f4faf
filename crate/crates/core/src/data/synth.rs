//! Small procedurally generated datasets for smoke tests and demos.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::{Dataset, Sample};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::CmfRng;

/// `per_class × classes` images. Class `k` shows a Gaussian blob in a
/// class-specific position and colour over a noisy background.
pub fn synthetic_blobs(per_class: usize, classes: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = CmfRng::seed_from_u64(seed);
    let noise = Normal::new(0.0f64, 0.05).expect("valid std");
    let mut samples = Vec::with_capacity(per_class * classes);
    let s = size as f64;
    for label in 0..classes {
        let angle = std::f64::consts::TAU * label as f64 / classes as f64;
        let (cx0, cy0) = (s / 2.0 + 0.25 * s * angle.cos(), s / 2.0 + 0.25 * s * angle.sin());
        let colour = [(label % 3 == 0) as u8, (label % 3 == 1) as u8, (label % 3 == 2 || label >= 3) as u8];
        for i in 0..per_class {
            let cx = cx0 + rng.gen_range(-s / 16.0..=s / 16.0);
            let cy = cy0 + rng.gen_range(-s / 16.0..=s / 16.0);
            let radius = s * rng.gen_range(0.08..0.14);
            let mut data = vec![0f32; 3 * size * size];
            for y in 0..size {
                for x in 0..size {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    let blob = (-d2 / (2.0 * radius * radius)).exp();
                    for c in 0..3 {
                        let base = 0.3 + noise.sample(&mut rng);
                        let v = base + 0.7 * blob * colour[c] as f64 - 0.2 * blob * (1 - colour[c]) as f64;
                        data[c * size * size + y * size + x] = v.clamp(0.0, 1.0) as f32;
                    }
                }
            }
            samples.push(Sample::new(
                Tensor::from_vec(&[3, size, size], data),
                label,
                format!("class{label}/{i:03}.png"),
            ));
        }
    }
    Dataset { class_names: (0..classes).map(|k| format!("class{k}")).collect(), samples, skipped: 0 }
}

/// Saves a `[3, H, W]` image in `[0, 1]` as 8-bit RGB: binary PPM for a
/// `.ppm` path, otherwise the format named by the extension.
pub fn write_image_png(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut raw = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            raw.push((image.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let path = path.as_ref();
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    let is_ppm = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(img.as_raw());
        fs::write(path, out)?;
    } else {
        img.save(path)?;
    }
    Ok(())
}

/// Writes [`synthetic_blobs`] as `root/classK/NNN.png`; returns the count.
pub fn write_synthetic_tree(
    root: impl AsRef<Path>,
    per_class: usize,
    classes: usize,
    size: usize,
    seed: u64,
) -> Result<usize> {
    let root = root.as_ref();
    let data = synthetic_blobs(per_class, classes, size, seed);
    for name in &data.class_names {
        fs::create_dir_all(root.join(name))?;
    }
    for s in &data.samples {
        write_image_png(root.join(&s.source_path), &s.image)?;
    }
    Ok(data.samples.len())
}
