use std::path::Path;

use super::lime::LimeExplanation;
use crate::data::write_image_png;
use crate::error::{CmfError, Result};
use crate::tensor::Tensor;

/// Heat opacity at saliency 1; opacity scales with saliency.
pub const OVERLAY_ALPHA: f64 = 0.4;
const OUTLINE: [f64; 3] = [1.0, 1.0, 0.0];

/// Jet colormap, `v` clamped to `[0, 1]`.
pub fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |x: f64| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Blends `jet(s)` over a `[3, H, W]` image with opacity `0.4 · s`.
pub fn render_overlay(image: &Tensor<f32>, saliency: &Tensor<f64>) -> Result<Tensor<f32>> {
    let (h, w) = match *image.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(CmfError::shape(format!("overlay needs a [3, H, W] image, got {s:?}"))),
    };
    if saliency.shape() != [h, w] {
        return Err(CmfError::shape(format!("saliency {:?} does not match image {h}x{w}", saliency.shape())));
    }
    let n = h * w;
    let mut out = image.data().to_vec();
    for (i, &s) in saliency.data().iter().enumerate() {
        let s = s.clamp(0.0, 1.0);
        let a = OVERLAY_ALPHA * s;
        if a == 0.0 {
            continue;
        }
        let heat = jet(s);
        for c in 0..3 {
            let v = &mut out[c * n + i];
            *v = ((1.0 - a) * *v as f64 + a * heat[c]) as f32;
        }
    }
    Ok(Tensor::from_vec(image.shape(), out))
}

/// 1 on the `q` strongest positive segments, 0 elsewhere.
pub fn lime_mask(explanation: &LimeExplanation, q: usize) -> Tensor<f64> {
    let seg = &explanation.segments;
    let top = explanation.top_segments(q);
    let data = seg.labels.iter().map(|l| f64::from(u8::from(top.contains(l)))).collect();
    Tensor::from_vec(&[seg.height, seg.width], data)
}

/// Tints the top-`q` positive segments and outlines their borders.
pub fn render_lime_overlay(image: &Tensor<f32>, explanation: &LimeExplanation, q: usize) -> Result<Tensor<f32>> {
    let mask = lime_mask(explanation, q);
    let mut out = render_overlay(image, &mask)?;
    let seg = &explanation.segments;
    let (h, w) = (seg.height, seg.width);
    let m = mask.data();
    let n = h * w;
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if m[i] == 0.0 {
                continue;
            }
            let edge = [(0, 1), (2, 1), (1, 0), (1, 2)].iter().any(|&(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                yy == 0 || xx == 0 || yy > h || xx > w || seg.labels[(yy - 1) * w + xx - 1] != seg.labels[i]
            });
            if edge {
                for (c, v) in OUTLINE.iter().enumerate() {
                    data[c * n + i] = *v as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Writes a `[3, H, W]` overlay; the format follows the extension.
pub fn write_overlay(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    write_image_png(path, image)
}
