use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::autodiff::Graph;
use crate::data::resize_bilinear;
use crate::error::{CmfError, Result};
use crate::model::{ConMatFormer, Tap};
use crate::tensor::{Element, Tensor};
use crate::CmfRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    GradCam,
    GradCamPp,
    Lime,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GradCam => "gradcam",
            Method::GradCamPp => "gradcampp",
            Method::Lime => "lime",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcam" => Ok(Method::GradCam),
            "gradcampp" => Ok(Method::GradCamPp),
            "lime" => Ok(Method::Lime),
            _ => Err(CmfError::Config(format!("unknown explanation method {s:?} (gradcam, gradcampp, lime)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    /// `[H_f, W_f]` before normalization.
    pub map: Tensor<f64>,
    /// `[H, W]` bilinear upsampling of `map`, min-max scaled to `[0, 1]`.
    pub upsampled: Tensor<f64>,
    pub target_class: usize,
    pub method: Method,
    /// Pre-softmax score of the target class.
    pub score: f64,
}

fn spatial(a: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match *a.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(CmfError::invalid(format!("tap layer has no spatial extent (shape {s:?})"))),
    }
}

/// `ReLU(Σ_k α_k A^k)` with `α_k` the spatial mean of `∂y/∂A^k`.
pub fn cam_from_gradients(activations: &Tensor<f64>, grads: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = spatial(activations)?;
    if grads.shape() != activations.shape() {
        return Err(CmfError::shape("activation and gradient shapes differ"));
    }
    let n = h * w;
    let weights: Vec<f64> = grads.data().chunks(n).map(|g| g.iter().sum::<f64>() / n as f64).collect();
    Ok(weighted_sum(activations, &weights, c, h, w))
}

/// Grad-CAM++ weights `w_k = Σ_ij a_ij ReLU(g_ij)` with
/// `a = g² / (2g² + Σ_ab A_ab g³)`, `g = ∂y/∂A`. The positive factor
/// `exp(y)` from the exponential outer derivative cancels in `a` and only
/// rescales the map, so it is dropped.
pub fn cam_pp_from_gradients(activations: &Tensor<f64>, grads: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = spatial(activations)?;
    if grads.shape() != activations.shape() {
        return Err(CmfError::shape("activation and gradient shapes differ"));
    }
    let n = h * w;
    let weights: Vec<f64> = activations
        .data()
        .chunks(n)
        .zip(grads.data().chunks(n))
        .map(|(a, g)| {
            let total: f64 = a.iter().sum();
            g.iter()
                .map(|&gi| {
                    let g2 = gi * gi;
                    let den = 2.0 * g2 + total * g2 * gi;
                    let alpha = if den != 0.0 { g2 / den } else { 0.0 };
                    alpha * gi.max(0.0)
                })
                .sum()
        })
        .collect();
    Ok(weighted_sum(activations, &weights, c, h, w))
}

fn weighted_sum(a: &Tensor<f64>, weights: &[f64], c: usize, h: usize, w: usize) -> Tensor<f64> {
    let n = h * w;
    let mut map = vec![0.0; n];
    for (k, plane) in a.data().chunks(n).enumerate().take(c) {
        for (m, &v) in map.iter_mut().zip(plane) {
            *m += weights[k] * v;
        }
    }
    Tensor::from_vec(&[h, w], map.into_iter().map(|v| v.max(0.0)).collect())
}

/// Bilinear resize of an `[h, w]` map to `[out_h, out_w]`, then min-max
/// scaling; a flat map becomes all zeros.
pub fn upsample_normalized(map: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Tensor<f64>> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let up = resize_bilinear(&map.reshape(&[1, h, w])?, out_h, out_w)?;
    let lo = up.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = up.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = up.data().iter().map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect();
    Ok(Tensor::from_vec(&[out_h, out_w], data))
}

/// Activation at `tap`, its gradient with respect to the target logit, the
/// target class (argmax when `None`) and its logit. Parameters enter the
/// graph as constants.
pub fn tap_gradients<T: Element>(
    model: &ConMatFormer<T>,
    image: &Tensor<f32>,
    target: Option<usize>,
    tap: Tap,
) -> Result<(Tensor<f64>, Tensor<f64>, usize, f64)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let x = g.leaf(image.cast());
    let out = model.forward_image(&mut g, &p, x, None::<&mut CmfRng>)?;
    let a = out.tap(tap).ok_or_else(|| CmfError::invalid(format!("model has no tap {}", tap.name())))?;
    let logits = g.value(out.logits).clone();
    let class = target.unwrap_or_else(|| logits.argmax());
    if class >= model.num_classes() {
        return Err(CmfError::invalid(format!("class {class} out of range for {} classes", model.num_classes())));
    }
    let activations = g.value(a).cast::<f64>();
    spatial(&activations)?;
    let y = g.index(out.logits, class)?;
    g.backward(y)?;
    let grads = g.grad(a).map(Tensor::cast).unwrap_or_else(|| Tensor::zeros(activations.shape()));
    Ok((activations, grads, class, logits.data()[class].as_f64()))
}

fn explain<T: Element>(
    model: &ConMatFormer<T>,
    image: &Tensor<f32>,
    target: Option<usize>,
    tap: Tap,
    method: Method,
) -> Result<Saliency> {
    let (a, grads, class, score) = tap_gradients(model, image, target, tap)?;
    let map = match method {
        Method::GradCam => cam_from_gradients(&a, &grads)?,
        _ => cam_pp_from_gradients(&a, &grads)?,
    };
    let s = model.input_size();
    let upsampled = upsample_normalized(&map, s, s)?;
    Ok(Saliency { map, upsampled, target_class: class, method, score })
}

/// Grad-CAM for `target` (the predicted class when `None`) at `tap`.
pub fn grad_cam<T: Element>(
    model: &ConMatFormer<T>,
    image: &Tensor<f32>,
    target: Option<usize>,
    tap: Tap,
) -> Result<Saliency> {
    explain(model, image, target, tap, Method::GradCam)
}

pub fn grad_cam_pp<T: Element>(
    model: &ConMatFormer<T>,
    image: &Tensor<f32>,
    target: Option<usize>,
    tap: Tap,
) -> Result<Saliency> {
    explain(model, image, target, tap, Method::GradCamPp)
}
