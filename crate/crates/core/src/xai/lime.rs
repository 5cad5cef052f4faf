use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CmfError, Result};
use crate::model::ConMatFormer;
use crate::tensor::{Element, Tensor};
use crate::CmfRng;

/// Integer segment id per pixel, row-major `[H, W]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub count: usize,
}

/// Regular `k × k` grid; cell `(r, c)` gets id `r·k + c`.
pub fn segment_grid(height: usize, width: usize, k: usize) -> Result<SegmentMask> {
    if k == 0 || k > height || k > width {
        return Err(CmfError::invalid(format!("grid of {k} per axis does not fit a {height}x{width} image")));
    }
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            labels.push((y * k / height) * k + x * k / width);
        }
    }
    Ok(SegmentMask { height, width, labels, count: k * k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Replacement {
    /// Per-channel image mean.
    Mean,
    Black,
    /// Box blur of the original.
    Blur,
}

impl std::str::FromStr for Replacement {
    type Err = CmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Replacement::Mean),
            "black" => Ok(Replacement::Black),
            "blur" => Ok(Replacement::Blur),
            _ => Err(CmfError::Config(format!("unknown LIME replacement {s:?} (mean, black, blur)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub replacement: Replacement,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self { n_samples: 500, kernel_width: 0.25, ridge_lambda: 1e-3, replacement: Replacement::Mean, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimeExplanation {
    pub target_class: usize,
    #[serde(skip)]
    pub segments: SegmentMask,
    /// One weight per segment id.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted R² of the surrogate.
    pub fit_r2: f64,
}

impl LimeExplanation {
    /// Ids of the `q` largest positive coefficients, strongest first.
    pub fn top_segments(&self, q: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.coefficients.len()).filter(|&i| self.coefficients[i] > 0.0).collect();
        ids.sort_by(|&a, &b| self.coefficients[b].total_cmp(&self.coefficients[a]).then(a.cmp(&b)));
        ids.truncate(q);
        ids
    }
}

/// Image used for switched-off segments.
pub fn replacement_image(image: &Tensor<f32>, kind: Replacement) -> Tensor<f32> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let n = h * w;
    match kind {
        Replacement::Black => Tensor::zeros(image.shape()),
        Replacement::Mean => {
            let mut out = Vec::with_capacity(c * n);
            for plane in image.data().chunks(n) {
                let m = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                out.extend(std::iter::repeat(m as f32).take(n));
            }
            Tensor::from_vec(image.shape(), out)
        }
        Replacement::Blur => {
            let r = (h.min(w) / 16).max(1) as isize;
            let mut out = Vec::with_capacity(c * n);
            for plane in image.data().chunks(n) {
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let (mut s, mut cnt) = (0.0f64, 0usize);
                        for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                            for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                                s += plane[yy as usize * w + xx as usize] as f64;
                                cnt += 1;
                            }
                        }
                        out.push((s / cnt as f64) as f32);
                    }
                }
            }
            Tensor::from_vec(image.shape(), out)
        }
    }
}

/// Keeps segments with `z[s]` set and takes the rest from `replacement`.
pub fn perturb(image: &Tensor<f32>, replacement: &Tensor<f32>, segments: &SegmentMask, z: &[bool]) -> Tensor<f32> {
    let n = segments.height * segments.width;
    let data = image
        .data()
        .iter()
        .zip(replacement.data())
        .enumerate()
        .map(|(i, (&v, &r))| if z[segments.labels[i % n]] { v } else { r })
        .collect();
    Tensor::from_vec(image.shape(), data)
}

/// `1 − cos(z, 1)`; an all-off mask is at distance 1.
pub fn cosine_distance_to_ones(z: &[bool]) -> f64 {
    let on = z.iter().filter(|&&b| b).count() as f64;
    if on == 0.0 {
        return 1.0;
    }
    1.0 - on / (on.sqrt() * (z.len() as f64).sqrt())
}

/// Ridge regression `min Σ w_i (y_i − b − x_i·β)² + λ‖β‖²` with the
/// intercept unpenalized. Returns `(β, b, weighted R²)`.
pub fn weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Result<(Vec<f64>, f64, f64)> {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    if n == 0 || y.len() != n || w.len() != n {
        return Err(CmfError::invalid("ridge: inconsistent sample counts"));
    }
    let wsum: f64 = w.iter().sum();
    if wsum <= 0.0 {
        return Err(CmfError::Numerical("ridge: sample weights sum to zero".into()));
    }
    let xbar: Vec<f64> = (0..d).map(|j| x.iter().zip(w).map(|(r, wi)| wi * r[j]).sum::<f64>() / wsum).collect();
    let ybar = y.iter().zip(w).map(|(yi, wi)| wi * yi).sum::<f64>() / wsum;
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let xc: Vec<f64> = row.iter().zip(&xbar).map(|(v, m)| v - m).collect();
        for i in 0..d {
            b[i] += wi * xc[i] * (yi - ybar);
            for j in 0..=i {
                a[i * d + j] += wi * xc[i] * xc[j];
            }
        }
    }
    for i in 0..d {
        a[i * d + i] += lambda;
    }
    let beta = cholesky_solve(&mut a, &b, d)?;
    let intercept = ybar - beta.iter().zip(&xbar).map(|(bj, mj)| bj * mj).sum::<f64>();
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let pred = intercept + row.iter().zip(&beta).map(|(v, bj)| v * bj).sum::<f64>();
        ss_res += wi * (yi - pred).powi(2);
        ss_tot += wi * (yi - ybar).powi(2);
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    };
    Ok((beta, intercept, r2))
}

/// Solves `A x = b` for symmetric positive definite `A`, lower triangle
/// stored row-major; `A` is overwritten by its factor.
fn cholesky_solve(a: &mut [f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag <= scale * 1e-14 {
            return Err(CmfError::Numerical("singular normal equations; use a positive ridge lambda".into()));
        }
        let l = diag.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l;
        }
    }
    let mut y = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            y[i] -= a[i * d + k] * y[k];
        }
        y[i] /= a[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            y[i] -= a[k * d + i] * y[k];
        }
        y[i] /= a[i * d + i];
    }
    Ok(y)
}

/// LIME over `segments`. `black_box` maps an image to class scores; the
/// first perturbation keeps every segment, the rest switch each segment on
/// with probability ½.
pub fn lime_explain<F>(
    black_box: F,
    image: &Tensor<f32>,
    target_class: usize,
    segments: &SegmentMask,
    config: &LimeConfig,
) -> Result<LimeExplanation>
where
    F: Fn(&Tensor<f32>) -> Result<Vec<f64>> + Sync,
{
    let s = segments.count;
    if image.rank() != 3 || image.shape()[1..] != [segments.height, segments.width] {
        return Err(CmfError::shape(format!(
            "segments are {}x{}, image is {:?}",
            segments.height,
            segments.width,
            image.shape()
        )));
    }
    if config.n_samples < s + 1 {
        return Err(CmfError::invalid(format!("LIME needs at least {} samples for {s} segments", s + 1)));
    }
    if !(config.kernel_width > 0.0) || config.ridge_lambda < 0.0 {
        return Err(CmfError::Config("LIME kernel width must be positive and lambda non-negative".into()));
    }
    let mut rng = CmfRng::seed_from_u64(config.seed);
    let masks: Vec<Vec<bool>> =
        (0..config.n_samples).map(|i| (0..s).map(|_| i == 0 || rng.gen_bool(0.5)).collect()).collect();
    let fill = replacement_image(image, config.replacement);
    let scores = masks
        .par_iter()
        .map(|z| {
            let out = black_box(&perturb(image, &fill, segments, z))?;
            out.get(target_class).copied().ok_or_else(|| {
                CmfError::invalid(format!("black box returned {} scores, need class {target_class}", out.len()))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let weights: Vec<f64> =
        masks.iter().map(|z| (-(cosine_distance_to_ones(z) / config.kernel_width).powi(2)).exp()).collect();
    let x: Vec<Vec<f64>> = masks.iter().map(|z| z.iter().map(|&b| f64::from(u8::from(b))).collect()).collect();
    let (coefficients, intercept, fit_r2) = weighted_ridge(&x, &scores, &weights, config.ridge_lambda)?;
    Ok(LimeExplanation { target_class, segments: segments.clone(), coefficients, intercept, fit_r2 })
}

/// LIME with the model's softmax output as the black box; the predicted
/// class is explained when `target` is `None`.
pub fn lime_model<T: Element>(
    model: &ConMatFormer<T>,
    image: &Tensor<f32>,
    target: Option<usize>,
    segments: &SegmentMask,
    config: &LimeConfig,
) -> Result<LimeExplanation> {
    let s = model.input_size();
    let proba = |img: &Tensor<f32>| -> Result<Vec<f64>> {
        let batch = img.cast::<T>().reshape(&[1, 3, s, s])?;
        Ok(model.predict_proba(&batch)?.to_f64_vec())
    };
    let class = match target {
        Some(c) if c < model.num_classes() => c,
        Some(c) => {
            return Err(CmfError::invalid(format!("class {c} out of range for {} classes", model.num_classes())))
        }
        None => Tensor::from_vec(&[model.num_classes()], proba(image)?).argmax(),
    };
    lime_explain(proba, image, class, segments, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_partitions() {
        let one = segment_grid(5, 7, 1).unwrap();
        assert!(one.labels.iter().all(|&l| l == 0));
        let g = segment_grid(224, 224, 4).unwrap();
        let mut sizes = vec![0; 16];
        for &l in &g.labels {
            sizes[l] += 1;
        }
        assert_eq!(sizes, vec![56 * 56; 16]);
        assert_eq!(g.labels[0], 0);
        assert_eq!(g.labels[224 * 224 - 1], 15);
        let odd = segment_grid(10, 9, 3).unwrap();
        let mut seen = vec![false; 9];
        for &l in &odd.labels {
            seen[l] = true;
        }
        assert!(seen.iter().all(|&b| b));
        assert!(segment_grid(4, 4, 0).is_err());
        assert!(segment_grid(4, 4, 5).is_err());
    }

    #[test]
    fn distance_and_kernel() {
        assert_eq!(cosine_distance_to_ones(&[true; 4]), 0.0);
        assert_eq!(cosine_distance_to_ones(&[false; 4]), 1.0);
        assert!((cosine_distance_to_ones(&[true, false, false, false]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ridge_matches_normal_equations() {
        // y = 1 + 2 x exactly, unit weights: λ shrinks β to Sxy / (Sxx + λ).
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..5).map(|i| 1.0 + 2.0 * i as f64).collect();
        let w = vec![1.0; 5];
        let (b, c, r2) = weighted_ridge(&x, &y, &w, 0.0).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let (b, c, _) = weighted_ridge(&x, &y, &w, 10.0).unwrap();
        assert!((b[0] - 20.0 / 20.0).abs() < 1e-12);
        assert!((c - 3.0).abs() < 1e-12);
        let dup: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, i as f64]).collect();
        assert!(weighted_ridge(&dup, &y, &w, 0.0).is_err());
        assert!(weighted_ridge(&dup, &y, &w, 1e-6).is_ok());
    }

    fn planted_image() -> (Tensor<f32>, SegmentMask) {
        let seg = segment_grid(4, 4, 2).unwrap();
        let plane: Vec<f32> = seg.labels.iter().map(|&l| 0.1 * (l + 1) as f32).collect();
        (Tensor::from_vec(&[3, 4, 4], plane.repeat(3)), seg)
    }

    #[test]
    fn constant_box_gives_zero_coefficients() {
        let (img, seg) = planted_image();
        let cfg = LimeConfig { n_samples: 200, ridge_lambda: 1e-6, ..Default::default() };
        let e = lime_explain(|_| Ok(vec![0.7, 0.3]), &img, 0, &seg, &cfg).unwrap();
        assert!(e.coefficients.iter().all(|c| c.abs() < 1e-6));
        assert!((e.intercept - 0.7).abs() < 1e-9);
    }

    #[test]
    fn planted_linear_box_is_recovered() {
        let (img, seg) = planted_image();
        let original = img.clone();
        let black_box = move |x: &Tensor<f32>| {
            let on = |pixel: usize| f64::from(u8::from(x.data()[pixel] == original.data()[pixel]));
            // pixel 0 is in segment 0, pixel 2 in segment 1
            Ok(vec![2.0 * on(0) - on(2)])
        };
        let cfg = LimeConfig { n_samples: 200, ridge_lambda: 1e-6, seed: 4, ..Default::default() };
        let e = lime_explain(&black_box, &img, 0, &seg, &cfg).unwrap();
        for (c, want) in e.coefficients.iter().zip([2.0, -1.0, 0.0, 0.0]) {
            assert!((c - want).abs() < 1e-3, "{:?}", e.coefficients);
        }
        assert!(e.fit_r2 > 0.999);
        assert_eq!(e.top_segments(3), vec![0]);
        assert_eq!(lime_explain(&black_box, &img, 0, &seg, &cfg).unwrap(), e);
    }

    #[test]
    fn replacements() {
        let (img, seg) = planted_image();
        let mean = replacement_image(&img, Replacement::Mean);
        assert!(mean.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let z = [true, false, false, true];
        let p = perturb(&img, &mean, &seg, &z);
        assert_eq!(p.data()[0], img.data()[0]);
        assert!((p.data()[2] - 0.25).abs() < 1e-6);
        assert!(replacement_image(&img, Replacement::Black).data().iter().all(|&v| v == 0.0));
        let blur = replacement_image(&Tensor::full(&[1, 4, 4], 0.5f32), Replacement::Blur);
        assert!(blur.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn too_few_samples() {
        let (img, seg) = planted_image();
        let cfg = LimeConfig { n_samples: 4, ..Default::default() };
        assert!(lime_explain(|_| Ok(vec![0.0]), &img, 0, &seg, &cfg).is_err());
    }
}
