use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{CmfError, Result};
use crate::CmfRng;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with the `n − 1` denominator; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

impl TTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(CmfError::invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(CmfError::invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = d.len() - 1;
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    let sd = sample_std(&d);
    if sd == 0.0 {
        return Err(CmfError::Numerical("paired differences have zero variance; t is undefined".into()));
    }
    let t = mean(&d) / (sd / (d.len() as f64).sqrt());
    Ok(TTest { t, p: student_t_two_sided_p(t, df as f64), df })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        for num in
            [m * (b - m) * x / ((a + m2 - 1.0) * (a + m2)), -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0))]
        {
            d = 1.0 + num * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + num / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub n: usize,
    pub mean: f64,
    /// `None` below two observations.
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CiMethod {
    /// `1.96 · sd / √n`
    Normal,
    /// Half the spread of the central 95% of resampled means.
    Bootstrap { resamples: usize, seed: u64 },
}

/// Mean max-softmax confidence per predicted class with a 95% half-width.
/// Classes that are never predicted are `None`.
pub fn class_confidence_intervals(
    probs: &[Vec<f64>],
    num_classes: usize,
    method: CiMethod,
) -> Vec<Option<ConfidenceInterval>> {
    let mut groups = vec![Vec::new(); num_classes];
    for row in probs {
        let (arg, conf) =
            row.iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        if arg < num_classes {
            groups[arg].push(conf);
        }
    }
    groups.iter().map(|g| confidence_interval(g, method)).collect()
}

pub fn confidence_interval(xs: &[f64], method: CiMethod) -> Option<ConfidenceInterval> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let half_width = (n >= 2).then(|| match method {
        CiMethod::Normal => 1.96 * sample_std(xs) / (n as f64).sqrt(),
        CiMethod::Bootstrap { resamples, seed } => {
            let mut rng = CmfRng::seed_from_u64(seed);
            let mut means: Vec<f64> = (0..resamples.max(1))
                .map(|_| (0..n).map(|_| xs[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
                .collect();
            means.sort_by(f64::total_cmp);
            let q = |p: f64| means[((p * (means.len() - 1) as f64).round()) as usize];
            (q(0.975) - q(0.025)) / 2.0
        }
    });
    Some(ConfidenceInterval { n, mean: mean(xs), half_width })
}
