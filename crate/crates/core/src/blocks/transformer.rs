//! Pre-LN transformer encoder block over the flattened spatial tokens of a
//! `[d, H, W]` feature map.

use rand::Rng;

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

pub const LN_EPS: f64 = 1e-6;
pub const MLP_RATIO: usize = 4;

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    /// `[d, 3d]`, columns ordered q | k | v, heads contiguous within each.
    pub qkv_w: ParamId,
    pub qkv_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    /// Learnable `[tokens, d]` position embedding, if enabled.
    pub pos_embed: Option<ParamId>,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        dropout: f64,
        pos_tokens: Option<usize>,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(CmfError::invalid(format!("width {dim} not divisible by {heads} heads")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(CmfError::invalid(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let d = dim;
        let h = MLP_RATIO * d;
        let mut add = |name: &str, t: Tensor<T>| store.add(format!("{prefix}.{name}"), t);
        let ln1_gamma = add("ln1_gamma", Tensor::ones(&[d]))?;
        let ln1_beta = add("ln1_beta", Tensor::zeros(&[d]))?;
        let qkv_w = add("qkv_w", init.weight(&[d, 3 * d]))?;
        let qkv_b = add("qkv_b", Tensor::zeros(&[3 * d]))?;
        let proj_w = add("proj_w", init.weight(&[d, d]))?;
        let proj_b = add("proj_b", Tensor::zeros(&[d]))?;
        let ln2_gamma = add("ln2_gamma", Tensor::ones(&[d]))?;
        let ln2_beta = add("ln2_beta", Tensor::zeros(&[d]))?;
        let fc1_w = add("fc1_w", init.weight(&[d, h]))?;
        let fc1_b = add("fc1_b", Tensor::zeros(&[h]))?;
        let fc2_w = add("fc2_w", init.weight(&[h, d]))?;
        let fc2_b = add("fc2_b", Tensor::zeros(&[d]))?;
        let pos_embed = match pos_tokens {
            Some(n) => Some(add("pos_embed", init.weight(&[n, d]))?),
            None => None,
        };
        Ok(Self {
            dim,
            heads,
            dropout,
            ln1_gamma,
            ln1_beta,
            qkv_w,
            qkv_b,
            proj_w,
            proj_b,
            ln2_gamma,
            ln2_beta,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            pos_embed,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Parameters in the self-attention sublayer (qkv and output projection).
    pub fn attention_params(&self) -> usize {
        4 * self.dim * self.dim + 4 * self.dim
    }

    pub fn mlp_params(&self) -> usize {
        2 * MLP_RATIO * self.dim * self.dim + (MLP_RATIO + 1) * self.dim
    }

    /// Multi-head scaled dot-product self-attention on `[N, d]` tokens,
    /// before the output projection.
    pub fn attention<T: Element>(&self, g: &mut Graph<T>, p: &Bound, tokens: Var) -> Result<Var> {
        let d = self.dim;
        let hd = self.head_dim();
        let qkv = g.linear(tokens, p.var(self.qkv_w), Some(p.var(self.qkv_b)))?;
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = g.narrow(qkv, 1, h * hd, hd)?;
            let k = g.narrow(qkv, 1, d + h * hd, hd)?;
            let v = g.narrow(qkv, 1, 2 * d + h * hd, hd)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores, 1)?;
            heads.push(g.matmul(weights, v)?);
        }
        g.concat(&heads, 1)
    }

    /// Dropout is applied after attention and after the MLP when `rng` is
    /// given; `None` is inference mode.
    pub fn forward<T: Element, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let (c, h, w) = match *g.shape(x) {
            [c, h, w] if c == self.dim => (c, h, w),
            ref s => return Err(CmfError::shape(format!("transformer block of width {} got {s:?}", self.dim))),
        };
        let flat = g.reshape(x, &[c, h * w])?;
        let mut tokens = g.transpose(flat)?;
        if let Some(pe) = self.pos_embed {
            tokens = g.add(tokens, p.var(pe))?;
        }

        let normed = g.layer_norm(tokens, 1, p.var(self.ln1_gamma), p.var(self.ln1_beta), LN_EPS)?;
        let attn = self.attention(g, p, normed)?;
        let attn = g.linear(attn, p.var(self.proj_w), Some(p.var(self.proj_b)))?;
        let attn = g.dropout(attn, self.dropout, rng.as_deref_mut())?;
        let tokens = g.add(tokens, attn)?;

        let normed = g.layer_norm(tokens, 1, p.var(self.ln2_gamma), p.var(self.ln2_beta), LN_EPS)?;
        let hidden = g.linear(normed, p.var(self.fc1_w), Some(p.var(self.fc1_b)))?;
        let hidden = g.gelu(hidden);
        let mlp = g.linear(hidden, p.var(self.fc2_w), Some(p.var(self.fc2_b)))?;
        let mlp = g.dropout(mlp, self.dropout, rng.as_deref_mut())?;
        let tokens = g.add(tokens, mlp)?;

        let out = g.transpose(tokens)?;
        g.reshape(out, &[c, h, w])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::verify::check_block;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    fn setup(d: usize, heads: usize, seed: u64) -> (ParamStore<f64>, TransformerBlock, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let b = TransformerBlock::new(&mut store, "t", d, heads, 0.1, None, &mut Init::new(&mut rng)).unwrap();
        (store, b, rng)
    }

    fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
        for t in store.tensors_mut() {
            *t = random(t.shape(), rng, 0.5);
        }
    }

    fn run(store: &ParamStore<f64>, b: &TransformerBlock, x: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = b.forward(&mut g, &p, xv, None::<&mut NoRng>).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn parameter_counts_at_full_width() {
        let (store, b, _) = setup(768, 8, 0);
        assert_eq!(b.attention_params(), 2_362_368);
        assert_eq!(b.mlp_params(), 4_722_432);
        let attn = ["qkv_w", "qkv_b", "proj_w", "proj_b"];
        let mlp = ["fc1_w", "fc1_b", "fc2_w", "fc2_b"];
        let count =
            |names: &[&str]| -> usize { names.iter().map(|n| store.by_name(&format!("t.{n}")).unwrap().numel()).sum() };
        assert_eq!(count(&attn), 2_362_368);
        assert_eq!(count(&mlp), 4_722_432);
        assert_eq!(store.total_params(), 2_362_368 + 4_722_432 + 4 * 768);
    }

    #[test]
    fn zero_projections_are_identity() {
        let (mut store, b, mut rng) = setup(8, 2, 1);
        randomize(&mut store, &mut rng);
        for id in [b.proj_w, b.proj_b, b.fc2_w, b.fc2_b] {
            let s = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(&s);
        }
        let x = random(&[8, 3, 3], &mut rng, 1.0);
        assert_eq!(run(&store, &b, &x), x);
    }

    fn layer_norm(v: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        v.iter().enumerate().map(|(i, x)| (x - mean) / (var + LN_EPS).sqrt() * gamma[i] + beta[i]).collect()
    }

    fn affine(v: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (din, dout) = (w.shape()[0], w.shape()[1]);
        (0..dout).map(|j| b.data()[j] + (0..din).map(|i| v[i] * w.data()[i * dout + j]).sum::<f64>()).collect()
    }

    #[test]
    fn single_token_matches_brute_force() {
        let d = 6;
        let (mut store, b, mut rng) = setup(d, 3, 2);
        randomize(&mut store, &mut rng);
        let x = random(&[d, 1, 1], &mut rng, 1.0);
        let got = run(&store, &b, &x);

        let t = |n: &str| store.by_name(&format!("t.{n}")).unwrap().clone();
        let x0 = x.data().to_vec();
        let n1 = layer_norm(&x0, t("ln1_gamma").data(), t("ln1_beta").data());
        // A lone token attends only to itself, so each head returns its value.
        let qkv = affine(&n1, &t("qkv_w"), &t("qkv_b"));
        let attn = affine(&qkv[2 * d..], &t("proj_w"), &t("proj_b"));
        let x1: Vec<f64> = x0.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let n2 = layer_norm(&x1, t("ln2_gamma").data(), t("ln2_beta").data());
        let hidden: Vec<f64> = affine(&n2, &t("fc1_w"), &t("fc1_b"))
            .iter()
            .map(|&v| 0.5 * v * (1.0 + libm::erf(v / 2f64.sqrt())))
            .collect();
        let mlp = affine(&hidden, &t("fc2_w"), &t("fc2_b"));
        for i in 0..d {
            assert!((got.data()[i] - (x1[i] + mlp[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_mix_values_convexly() {
        let (mut store, b, mut rng) = setup(4, 1, 3);
        randomize(&mut store, &mut rng);
        let tokens = random(&[5, 4], &mut rng, 1.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let tv = g.constant(tokens.clone());
        let out = b.attention(&mut g, &p, tv).unwrap();
        let qkv = affine_rows(&tokens, store.get(b.qkv_w), store.get(b.qkv_b));
        for j in 0..4 {
            let col: Vec<f64> = (0..5).map(|n| qkv[n * 12 + 8 + j]).collect();
            let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            for n in 0..5 {
                let v = g.value(out).data()[n * 4 + j];
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    fn affine_rows(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let din = x.shape()[1];
        x.data().chunks(din).flat_map(|row| affine(row, w, b)).collect()
    }

    #[test]
    fn dropout_only_in_training() {
        let (store, b, mut rng) = setup(8, 2, 4);
        let x = random(&[8, 2, 2], &mut rng, 1.0);
        let eval_a = run(&store, &b, &x);
        let eval_b = run(&store, &b, &x);
        assert_eq!(eval_a, eval_b);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mut drng = ChaCha8Rng::seed_from_u64(9);
        let y = b.forward(&mut g, &p, xv, Some(&mut drng)).unwrap();
        assert_ne!(g.value(y), &eval_a);
    }

    #[test]
    fn block_gradients() {
        let (mut store, b, mut rng) = setup(8, 2, 5);
        randomize(&mut store, &mut rng);
        let x = random(&[8, 2, 2], &mut rng, 1.0);
        let err = check_block(&store, &x, Some(40), 5, |g, p, x| b.forward(g, p, x, None::<&mut NoRng>)).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn position_embedding_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let b = TransformerBlock::new(&mut store, "t", 4, 2, 0.0, Some(4), &mut Init::new(&mut rng)).unwrap();
        randomize(&mut store, &mut rng);
        let x = random(&[4, 2, 2], &mut rng, 1.0);
        let err = check_block(&store, &x, Some(30), 6, |g, p, x| b.forward(g, p, x, None::<&mut NoRng>)).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn rejects_bad_head_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        assert!(TransformerBlock::new(&mut store, "t", 10, 4, 0.1, None, &mut Init::new(&mut rng)).is_err());
    }
}
