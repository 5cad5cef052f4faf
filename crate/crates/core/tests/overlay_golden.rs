use std::fs;
use std::path::PathBuf;

use conmatformer::xai::{render_overlay, write_overlay};
use conmatformer::Tensor;

fn golden() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/overlay_8x8.ppm")
}

fn inputs() -> (Tensor<f32>, Tensor<f64>) {
    let (h, w) = (8, 8);
    let mut img = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                img.push(((x + 2 * y + 5 * c) % 8) as f32 / 7.0);
            }
        }
    }
    let sal = (0..h * w).map(|i| (i % w + i / w) as f64 / 14.0).collect();
    (Tensor::from_vec(&[3, h, w], img), Tensor::from_vec(&[h, w], sal))
}

// Piecewise jet: blue -> cyan -> yellow -> red.
fn jet_oracle(v: f64) -> [f64; 3] {
    let seg = |lo: f64, hi: f64, x: f64| ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    let r = if v < 0.375 {
        0.0
    } else if v < 0.625 {
        seg(0.375, 0.625, v)
    } else if v < 0.875 {
        1.0
    } else {
        1.0 - 0.5 * seg(0.875, 1.0, v)
    };
    let g = if v < 0.125 {
        0.0
    } else if v < 0.375 {
        seg(0.125, 0.375, v)
    } else if v < 0.625 {
        1.0
    } else {
        1.0 - seg(0.625, 0.875, v)
    };
    let b = if v < 0.125 {
        0.5 + 0.5 * seg(0.0, 0.125, v)
    } else if v < 0.375 {
        1.0
    } else {
        1.0 - seg(0.375, 0.625, v)
    };
    [r, g, b]
}

#[test]
fn overlay_matches_blend_formula() {
    let (img, sal) = inputs();
    let out = render_overlay(&img, &sal).unwrap();
    let n = 64;
    for i in 0..n {
        let s = sal.data()[i];
        let heat = jet_oracle(s);
        for c in 0..3 {
            let want = (1.0 - 0.4 * s) * img.data()[c * n + i] as f64 + 0.4 * s * heat[c];
            assert!((out.data()[c * n + i] as f64 - want).abs() < 1e-6, "pixel {i} channel {c}");
        }
    }
}

#[test]
fn overlay_bytes_are_frozen() {
    let (img, sal) = inputs();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("overlay.ppm");
    write_overlay(&path, &render_overlay(&img, &sal).unwrap()).unwrap();
    let got = fs::read(&path).unwrap();
    let want = fs::read(golden()).expect("golden file present");
    assert_eq!(got, want);
}
