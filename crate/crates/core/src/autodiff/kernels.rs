//! Raw slice kernels shared by the forward and backward passes. Every
//! reduction runs in a fixed order so results are bit-reproducible.

use rayon::prelude::*;

use crate::tensor::Element;

/// Below this many multiply-adds a matmul stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 18;

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    let row = |(i, out): (usize, &mut [T])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// `c[m×k] = a[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_nt<T: Element>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * k];
    if m == 0 || k == 0 {
        return c;
    }
    let row = |(i, out): (usize, &mut [T])| {
        let arow = &a[i * n..(i + 1) * n];
        for (p, o) in out.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            *o = dot(arow, brow);
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        c.chunks_mut(k).enumerate().for_each(row);
    }
    c
}

/// `c[k×n] = a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    if k == 0 || n == 0 {
        return c;
    }
    let row = |(p, out): (usize, &mut [T])| {
        for i in 0..m {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn transpose<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// For every flat index of an `a`-shaped tensor, the flat index of the
/// element of a broadcast operand of shape `b` (same rank, dims 1 or equal).
pub(crate) fn broadcast_map(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len();
    let mut b_strides = vec![0usize; rank];
    let mut stride = 1;
    for d in (0..rank).rev() {
        b_strides[d] = if b[d] == 1 { 0 } else { stride };
        stride *= b[d];
    }
    let numel: usize = a.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += b_strides[d];
            if idx[d] < a[d] {
                break;
            }
            off -= b_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// Geometry of a 2-D convolution over a single `[C, H, W]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.kw) / self.stride + 1
    }

    fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    /// Output positions `o` (along one axis of length `out`) whose input
    /// coordinate `o*stride + k - padding` lands inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = k as isize - self.padding as isize;
        // smallest o with o*s + shift >= 0
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        // largest o with o*s + shift <= len - 1
        let hi_num = len as isize - 1 - shift;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out as isize);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(g: &ConvGeometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (cin_g, cout_g) = (g.cin_per_group(), g.cout_per_group());
    let mut y = vec![T::zero(); g.c_out * oh * ow];
    let plane = |(oc, out): (usize, &mut [T])| {
        if let Some(b) = bias {
            out.iter_mut().for_each(|v| *v = b[oc]);
        }
        let group = oc / cout_g;
        for icg in 0..cin_g {
            let ic = group * cin_g + icg;
            let xin = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid_range(ky, g.h, oh);
                for kx in 0..g.kw {
                    let wv = w[((oc * cin_g + icg) * g.kh + ky) * g.kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (ox0, ox1) = g.valid_range(kx, g.w, ow);
                    if ox0 == ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let orow = &mut out[oy * ow..(oy + 1) * ow];
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.padding;
                            for (o, &xv) in orow[ox0..ox1].iter_mut().zip(&xrow[ix0..]) {
                                *o += wv * xv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] += wv * xrow[ox * g.stride + kx - g.padding];
                            }
                        }
                    }
                }
            }
        }
    };
    if g.c_out * cin_g * g.kh * g.kw * oh * ow >= PAR_THRESHOLD {
        y.par_chunks_mut(oh * ow).enumerate().for_each(plane);
    } else {
        y.chunks_mut(oh * ow).enumerate().for_each(plane);
    }
    y
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    gy: &[T],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (cin_g, cout_g) = (g.cin_per_group(), g.cout_per_group());
    let gb: Vec<T> = gy.chunks(oh * ow).map(|p| p.iter().copied().sum()).collect();

    let gw = want_w.then(|| {
        let mut gw = vec![T::zero(); w.len()];
        let per_oc = cin_g * g.kh * g.kw;
        let fill = |(oc, gw_oc): (usize, &mut [T])| {
            let group = oc / cout_g;
            let gplane = &gy[oc * oh * ow..(oc + 1) * oh * ow];
            for icg in 0..cin_g {
                let ic = group * cin_g + icg;
                let xin = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_range(ky, g.h, oh);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = g.valid_range(kx, g.w, ow);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                            for ox in ox0..ox1 {
                                acc += grow[ox] * xrow[ox * g.stride + kx - g.padding];
                            }
                        }
                        gw_oc[(icg * g.kh + ky) * g.kw + kx] = acc;
                    }
                }
            }
        };
        if g.c_out * per_oc * oh * ow >= PAR_THRESHOLD {
            gw.par_chunks_mut(per_oc).enumerate().for_each(fill);
        } else {
            gw.chunks_mut(per_oc).enumerate().for_each(fill);
        }
        gw
    });

    let gx = want_x.then(|| {
        let mut gx = vec![T::zero(); x.len()];
        let fill = |(ic, gx_ic): (usize, &mut [T])| {
            let group = ic / cin_g;
            let icg = ic % cin_g;
            for ocg in 0..cout_g {
                let oc = group * cout_g + ocg;
                let gplane = &gy[oc * oh * ow..(oc + 1) * oh * ow];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_range(ky, g.h, oh);
                    for kx in 0..g.kw {
                        let wv = w[((oc * cin_g + icg) * g.kh + ky) * g.kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox0, ox1) = g.valid_range(kx, g.w, ow);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let xrow = &mut gx_ic[iy * g.w..(iy + 1) * g.w];
                            for ox in ox0..ox1 {
                                xrow[ox * g.stride + kx - g.padding] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        };
        if g.c_in * cout_g * g.kh * g.kw * oh * ow >= PAR_THRESHOLD {
            gx.par_chunks_mut(g.h * g.w).enumerate().for_each(fill);
        } else {
            gx.chunks_mut(g.h * g.w).enumerate().for_each(fill);
        }
        gx
    });

    (gx, gw, gb)
}

#[inline]
pub(crate) fn gelu<T: Element>(x: T) -> T {
    T::of(0.5) * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad<T: Element>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let cin_g = g.c_in / g.groups;
        let cout_g = g.c_out / g.groups;
        let mut y = vec![0.0; g.c_out * oh * ow];
        for oc in 0..g.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for icg in 0..cin_g {
                        let ic = (oc / cout_g) * cin_g + icg;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += w[((oc * cin_g + icg) * g.kh + ky) * g.kw + kx]
                                    * x[(ic * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    y[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_loops() {
        let geoms = [
            ConvGeometry { c_in: 2, h: 5, w: 6, c_out: 3, kh: 3, kw: 3, stride: 1, padding: 1, groups: 1 },
            ConvGeometry { c_in: 4, h: 7, w: 7, c_out: 4, kh: 7, kw: 7, stride: 1, padding: 3, groups: 4 },
            ConvGeometry { c_in: 3, h: 8, w: 8, c_out: 2, kh: 4, kw: 4, stride: 4, padding: 0, groups: 1 },
            ConvGeometry { c_in: 4, h: 6, w: 5, c_out: 2, kh: 2, kw: 3, stride: 2, padding: 1, groups: 2 },
            ConvGeometry { c_in: 3, h: 2, w: 2, c_out: 3, kh: 7, kw: 7, stride: 1, padding: 3, groups: 3 },
        ];
        for g in geoms {
            let x: Vec<f64> = (0..g.c_in * g.h * g.w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let w: Vec<f64> =
                (0..g.c_out * g.c_in / g.groups * g.kh * g.kw).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.5).collect();
            assert_eq!(conv2d_forward(&g, &x, &w, None), naive_conv(&g, &x, &w), "{g:?}");
        }
    }

    #[test]
    fn broadcast_map_repeats_trailing_and_leading() {
        assert_eq!(broadcast_map(&[2, 3], &[1, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_map(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_map(&[2, 2], &[1, 1]), vec![0, 0, 0, 0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i % 7) as f64 - 3.0).collect();
        let c = matmul(&a, &b, m, k, n);
        let bt = transpose(&b, k, n);
        assert_eq!(matmul_nt(&a, &bt, m, k, n), c);
        let at = transpose(&a, m, k);
        assert_eq!(matmul_tn(&at, &b, k, m, n), c);
    }
}
