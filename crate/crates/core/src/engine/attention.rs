use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Ctx, Dropout, DropoutCache, FeedForward, FeedForwardCache, Layer, LayerNorm, LayerNormCache, Linear};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Scaled dot-product multi-head self-attention without positional encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights, indexed `sequence * heads + head`.
    weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

impl MultiHeadAttention {
    pub fn xavier<R: Rng>(d_model: usize, heads: usize, d_k: usize, d_v: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            heads,
            d_k,
            d_v,
            wq: Linear::xavier(d_model, heads * d_k, true, rng),
            wk: Linear::xavier(d_model, heads * d_k, true, rng),
            wv: Linear::xavier(d_model, heads * d_v, true, rng),
            wo: Linear::xavier(heads * d_v, d_model, true, rng),
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.in_dim()
    }

    pub fn check_input(&self, x: &Array2<f64>, seq_len: usize) -> Result<()> {
        if x.ncols() != self.d_model() {
            return Err(Error::structural(format!(
                "attention expects {} features per token, got {}",
                self.d_model(),
                x.ncols()
            )));
        }
        if seq_len == 0 || x.nrows() % seq_len != 0 {
            return Err(Error::structural(format!(
                "{} rows do not split into sequences of length {seq_len}",
                x.nrows()
            )));
        }
        Ok(())
    }

    pub fn try_forward(&self, x: &Array2<f64>, ctx: &Ctx) -> Result<(Array2<f64>, AttentionCache)> {
        self.check_input(x, ctx.seq_len)?;
        Ok(self.forward(x, ctx))
    }
}

impl Layer for MultiHeadAttention {
    type Cache = AttentionCache;

    fn forward(&self, x: &Array2<f64>, ctx: &Ctx) -> (Array2<f64>, AttentionCache) {
        let seq = ctx.seq_len;
        let n_seq = x.nrows() / seq;
        let xv = x.view();
        let q = self.wq.apply(&xv);
        let k = self.wk.apply(&xv);
        let v = self.wv.apply(&xv);
        let scale = 1.0 / (self.d_k as f64).sqrt();
        let mut concat = Array2::zeros((x.nrows(), self.heads * self.d_v));
        let mut weights = Vec::with_capacity(n_seq * self.heads);
        for sq in 0..n_seq {
            let rows = sq * seq..(sq + 1) * seq;
            for h in 0..self.heads {
                let qh = q.slice(s![rows.clone(), h * self.d_k..(h + 1) * self.d_k]);
                let kh = k.slice(s![rows.clone(), h * self.d_k..(h + 1) * self.d_k]);
                let vh = v.slice(s![rows.clone(), h * self.d_v..(h + 1) * self.d_v]);
                let mut a = qh.dot(&kh.t()) * scale;
                softmax_rows(&mut a);
                concat
                    .slice_mut(s![rows.clone(), h * self.d_v..(h + 1) * self.d_v])
                    .assign(&a.dot(&vh));
                weights.push(a);
            }
        }
        let y = self.wo.apply(&concat.view());
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                concat,
            },
        )
    }

    fn backward(&mut self, c: &AttentionCache, dy: &Array2<f64>) -> Array2<f64> {
        let dconcat = self.wo.backward(&c.concat, dy);
        let rows_total = c.x.nrows();
        let n_seq = c.weights.len() / self.heads;
        let seq = rows_total / n_seq.max(1);
        let scale = 1.0 / (self.d_k as f64).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for sq in 0..n_seq {
            let rows = sq * seq..(sq + 1) * seq;
            for h in 0..self.heads {
                let a = &c.weights[sq * self.heads + h];
                let kc = h * self.d_k..(h + 1) * self.d_k;
                let vc = h * self.d_v..(h + 1) * self.d_v;
                let d_out = dconcat.slice(s![rows.clone(), vc.clone()]);
                let vh = c.v.slice(s![rows.clone(), vc.clone()]);
                let qh = c.q.slice(s![rows.clone(), kc.clone()]);
                let kh = c.k.slice(s![rows.clone(), kc.clone()]);
                let da = d_out.dot(&vh.t());
                dv.slice_mut(s![rows.clone(), vc]).assign(&a.t().dot(&d_out));
                // softmax backward, row by row
                let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (&da - &row_dot) * a * scale;
                dq.slice_mut(s![rows.clone(), kc.clone()]).assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), kc]).assign(&ds.t().dot(&qh));
            }
        }
        let mut dx = self.wq.backward(&c.x, &dq);
        dx += &self.wk.backward(&c.x, &dk);
        dx += &self.wv.backward(&c.x, &dv);
        dx
    }

    fn params(&self) -> Vec<&Tensor> {
        [&self.wq, &self.wk, &self.wv, &self.wo]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.wq.params_mut();
        p.extend(self.wk.params_mut());
        p.extend(self.wv.params_mut());
        p.extend(self.wo.params_mut());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormPlacement {
    /// `LayerNorm(x + sublayer(x))`, the original encoder layout.
    #[default]
    Post,
    /// `x + sublayer(LayerNorm(x))`.
    Pre,
}

/// One encoder block: self-attention and a feed-forward sublayer, each with
/// dropout, a residual connection and layer normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub drop1: Dropout,
    pub drop2: Dropout,
    pub norm: NormPlacement,
}

pub struct EncoderCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    drop1: DropoutCache,
    ln2: LayerNormCache,
    ffn: FeedForwardCache,
    drop2: DropoutCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub activation: Activation,
}

impl EncoderLayer {
    pub fn xavier<R: Rng>(
        dims: EncoderDims,
        dropout: f64,
        norm: NormPlacement,
        layer_index: u64,
        rng: &mut R,
    ) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::xavier(dims.d_model, dims.heads, dims.d_k, dims.d_v, rng),
            ffn: FeedForward::xavier(dims.d_model, dims.d_ff, dims.activation, rng),
            ln1: LayerNorm::new(dims.d_model),
            ln2: LayerNorm::new(dims.d_model),
            drop1: Dropout::new(dropout, 2 * layer_index),
            drop2: Dropout::new(dropout, 2 * layer_index + 1),
            norm,
        }
    }
}

impl Layer for EncoderLayer {
    type Cache = EncoderCache;

    fn forward(&self, x: &Array2<f64>, ctx: &Ctx) -> (Array2<f64>, EncoderCache) {
        match self.norm {
            NormPlacement::Post => {
                let (a, attn) = self.attn.forward(x, ctx);
                let (a, drop1) = self.drop1.forward(&a, ctx);
                let (h, ln1) = self.ln1.forward(&(x + &a), ctx);
                let (f, ffn) = self.ffn.forward(&h, ctx);
                let (f, drop2) = self.drop2.forward(&f, ctx);
                let (y, ln2) = self.ln2.forward(&(&h + &f), ctx);
                (y, EncoderCache { ln1, attn, drop1, ln2, ffn, drop2 })
            }
            NormPlacement::Pre => {
                let (n1, ln1) = self.ln1.forward(x, ctx);
                let (a, attn) = self.attn.forward(&n1, ctx);
                let (a, drop1) = self.drop1.forward(&a, ctx);
                let h = x + &a;
                let (n2, ln2) = self.ln2.forward(&h, ctx);
                let (f, ffn) = self.ffn.forward(&n2, ctx);
                let (f, drop2) = self.drop2.forward(&f, ctx);
                (&h + &f, EncoderCache { ln1, attn, drop1, ln2, ffn, drop2 })
            }
        }
    }

    fn backward(&mut self, c: &EncoderCache, dy: &Array2<f64>) -> Array2<f64> {
        match self.norm {
            NormPlacement::Post => {
                let d_sum2 = self.ln2.backward(&c.ln2, dy);
                let df = self.drop2.backward(&c.drop2, &d_sum2);
                let dh = &d_sum2 + &self.ffn.backward(&c.ffn, &df);
                let d_sum1 = self.ln1.backward(&c.ln1, &dh);
                let da = self.drop1.backward(&c.drop1, &d_sum1);
                &d_sum1 + &self.attn.backward(&c.attn, &da)
            }
            NormPlacement::Pre => {
                let df = self.drop2.backward(&c.drop2, dy);
                let dn2 = self.ffn.backward(&c.ffn, &df);
                let dh = dy + &self.ln2.backward(&c.ln2, &dn2);
                let da = self.drop1.backward(&c.drop1, &dh);
                let dn1 = self.attn.backward(&c.attn, &da);
                &dh + &self.ln1.backward(&c.ln1, &dn1)
            }
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.attn.params();
        p.extend(self.ln1.params());
        p.extend(self.ffn.params());
        p.extend(self.ln2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.attn.params_mut();
        p.extend(self.ln1.params_mut());
        p.extend(self.ffn.params_mut());
        p.extend(self.ln2.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = EncoderDims { d_model: 8, heads: 4, d_k: 2, d_v: 2, d_ff: 16, activation: Activation::Gelu };
        let layer = EncoderLayer::xavier(dims, 0.2, NormPlacement::Post, 0, &mut rng);
        let x = random_input(5, 8, 1);
        let perm = [3usize, 0, 4, 1, 2];
        let xp = Array2::from_shape_fn((5, 8), |(i, j)| x[[perm[i], j]]);
        let ctx = Ctx::eval(5);
        let (y, _) = layer.forward(&x, &ctx);
        let (yp, _) = layer.forward(&xp, &ctx);
        for i in 0..5 {
            for j in 0..8 {
                assert!((yp[[i, j]] - y[[perm[i], j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = MultiHeadAttention::xavier(8, 4, 2, 2, &mut rng);
        let x = Array2::zeros((6, 8));
        let (_, cache) = attn.forward(&x, &Ctx::eval(6));
        for a in &cache.weights {
            assert!(a.iter().all(|&w| (w - 1.0 / 6.0).abs() < 1e-15));
        }
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = MultiHeadAttention::xavier(8, 4, 2, 2, &mut rng);
        let x = Array2::zeros((6, 7));
        assert!(matches!(attn.try_forward(&x, &Ctx::eval(6)), Err(Error::Structural(_))));
        let x = Array2::zeros((6, 8));
        assert!(attn.try_forward(&x, &Ctx::eval(4)).is_err());
    }

    #[test]
    fn sequences_do_not_interact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let attn = MultiHeadAttention::xavier(4, 2, 2, 2, &mut rng);
        let x = random_input(6, 4, 2);
        let (both, _) = attn.forward(&x, &Ctx::eval(3));
        let (first, _) = attn.forward(&x.slice(s![..3, ..]).to_owned(), &Ctx::eval(3));
        assert_eq!(both.slice(s![..3, ..]), first);
    }
}
