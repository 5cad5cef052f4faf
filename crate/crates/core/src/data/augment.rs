//! Geometric augmentation on `[3, H, W]` images: bilinear resampling,
//! zero fill outside the source.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

pub const FLIP_PROBABILITIES: [f64; 2] = [0.2, 0.5];
pub const ROTATION_DEGREES: [f64; 4] = [15.0, 30.0, 45.0, 60.0];

/// The augmentation menu. Each call to [`augment_image`] draws one
/// [`AugmentParams`] from it.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub size: usize,
    pub flip_probabilities: Vec<f64>,
    pub rotation_degrees: Vec<f64>,
    pub affine_degrees: f64,
    pub translate: (f64, f64),
    pub scale: (f64, f64),
}

impl AugmentSpec {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            flip_probabilities: FLIP_PROBABILITIES.to_vec(),
            rotation_degrees: ROTATION_DEGREES.to_vec(),
            affine_degrees: 10.0,
            translate: (0.1, 0.1),
            scale: (0.9, 1.1),
        }
    }

    /// Resize only.
    pub fn identity(size: usize) -> Self {
        Self {
            size,
            flip_probabilities: vec![0.0],
            rotation_degrees: vec![0.0],
            affine_degrees: 0.0,
            translate: (0.0, 0.0),
            scale: (1.0, 1.0),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let pick = |rng: &mut R, menu: &[f64]| *menu.choose(rng).unwrap_or(&0.0);
        let hflip_p = pick(rng, &self.flip_probabilities);
        let hflip = rng.gen::<f64>() < hflip_p;
        let vflip_p = pick(rng, &self.flip_probabilities);
        let vflip = rng.gen::<f64>() < vflip_p;
        let rotation = pick(rng, &self.rotation_degrees);
        let sym = |rng: &mut R, a: f64| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
        let affine_angle = sym(rng, self.affine_degrees);
        let tx = sym(rng, self.translate.0);
        let ty = sym(rng, self.translate.1);
        let scale = if self.scale.1 > self.scale.0 { rng.gen_range(self.scale.0..=self.scale.1) } else { self.scale.0 };
        AugmentParams { hflip, vflip, rotation, affine_angle, translate: (tx, ty), scale }
    }
}

/// One concrete draw. Translations are fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation: f64,
    pub affine_angle: f64,
    pub translate: (f64, f64),
    pub scale: f64,
}

impl AugmentParams {
    /// Resize → hflip → vflip → rotation → affine, clamped to `[0, 1]`.
    pub fn apply(&self, image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
        let mut img = resize_bilinear(image, size, size)?;
        if self.hflip {
            img = flip_horizontal(&img);
        }
        if self.vflip {
            img = flip_vertical(&img);
        }
        if self.rotation != 0.0 {
            img = rotate(&img, self.rotation)?;
        }
        if self.affine_angle != 0.0 || self.translate != (0.0, 0.0) || self.scale != 1.0 {
            let t = (self.translate.0 * size as f64, self.translate.1 * size as f64);
            img = warp_affine(&img, self.affine_angle, t, self.scale)?;
        }
        Ok(img.map(|v| v.clamp(0.0, 1.0)))
    }
}

pub fn augment_image<R: Rng + ?Sized>(image: &Tensor<f32>, spec: &AugmentSpec, rng: &mut R) -> Result<Tensor<f32>> {
    spec.draw(rng).apply(image, spec.size)
}

fn dims<T: Element>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
        ref s => Err(CmfError::Data(format!("expected a non-empty [C, H, W] image, got {s:?}"))),
    }
}

/// Bilinear sample of one channel plane at fractional `(x, y)`; zero
/// outside the pixel grid.
fn sample_zero(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize] as f64
        }
    };
    let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1.0, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1.0) * (1.0 - fx) * fy
        + at(x0 + 1.0, y0 + 1.0) * fx * fy;
    v as f32
}

/// Half-pixel-centre bilinear resize with edge clamping.
pub fn resize_bilinear<T: Element>(image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims(image)?;
    if out_h == 0 || out_w == 0 {
        return Err(CmfError::Data("resize target must be non-empty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let coord = |o: usize, s: f64, len: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, sx, w)).collect();
    let ys: Vec<_> = (0..out_h).map(|y| coord(y, sy, h)).collect();
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0].as_f64() * (1.0 - fx) + plane[y0 * w + x1].as_f64() * fx;
                let bot = plane[y1 * w + x0].as_f64() * (1.0 - fx) + plane[y1 * w + x1].as_f64() * fx;
                out.push(T::of(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Ok(Tensor::from_vec(&[c, out_h, out_w], out))
}

pub fn flip_horizontal(image: &Tensor<f32>) -> Tensor<f32> {
    let s = image.shape();
    let w = s[s.len() - 1];
    let mut out = image.data().to_vec();
    for row in out.chunks_mut(w) {
        row.reverse();
    }
    Tensor::from_vec(s, out)
}

pub fn flip_vertical(image: &Tensor<f32>) -> Tensor<f32> {
    let s = image.shape().to_vec();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = Vec::with_capacity(image.numel());
    for plane in image.data().chunks(h * w) {
        for y in (0..h).rev() {
            out.extend_from_slice(&plane[y * w..(y + 1) * w]);
        }
    }
    Tensor::from_vec(&s, out)
}

/// Rotation about the image centre by `degrees`, counter-clockwise as
/// displayed.
pub fn rotate(image: &Tensor<f32>, degrees: f64) -> Result<Tensor<f32>> {
    warp_affine(image, degrees, (0.0, 0.0), 1.0)
}

/// Rotate by `degrees` about the centre, scale by `scale`, then translate by
/// `(tx, ty)` pixels. Each output pixel samples the inverse-mapped source.
pub fn warp_affine(image: &Tensor<f32>, degrees: f64, translate: (f64, f64), scale: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(image)?;
    if scale <= 0.0 {
        return Err(CmfError::Data(format!("affine scale must be positive, got {scale}")));
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = image.data();
    let mut out = Vec::with_capacity(image.numel());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // Offsets in a y-up frame, then rotate by -θ and unscale.
                let dx = x as f64 - cx - translate.0;
                let dy = -(y as f64 - cy - translate.1);
                let rx = (cos * dx + sin * dy) / scale;
                let ry = (-sin * dx + cos * dy) / scale;
                out.push(sample_zero(plane, h, w, cx + rx, cy - ry));
            }
        }
    }
    Ok(Tensor::from_vec(&[c, h, w], out))
}
