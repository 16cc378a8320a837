//! Layers with hand-written backward passes. Inputs are `[rows, features]`
//! matrices; sequence layers additionally read `Ctx::seq_len` to split the
//! rows into independent sequences.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Training forward pass; `step` feeds the dropout counter.
    Train { seed: u64, step: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ctx {
    pub mode: Mode,
    /// Tokens per sequence for attention; rows must be a multiple of it.
    pub seq_len: usize,
    /// Global index of the first row, so dropout draws do not depend on how
    /// rows are chunked.
    pub row_offset: u64,
}

impl Ctx {
    pub fn eval(seq_len: usize) -> Self {
        Ctx {
            mode: Mode::Eval,
            seq_len,
            row_offset: 0,
        }
    }
}

pub trait Layer {
    type Cache;

    fn forward(&self, x: &Array2<f64>, ctx: &Ctx) -> (Array2<f64>, Self::Cache);

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, cache: &Self::Cache, dy: &Array2<f64>) -> Array2<f64>;

    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn xavier<R: Rng>(fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        Linear {
            weight: Tensor::xavier_uniform(fan_in, fan_out, rng),
            bias: bias.then(|| Tensor::zeros(&[fan_out])),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: bias.then(|| Tensor::zeros(&[fan_out])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.view2());
        if let Some(b) = &self.bias {
            y += &b.view1();
        }
        y
    }
}

impl Layer for Linear {
    type Cache = Array2<f64>;

    fn forward(&self, x: &Array2<f64>, _ctx: &Ctx) -> (Array2<f64>, Self::Cache) {
        (self.apply(&x.view()), x.clone())
    }

    fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let dw = x.t().dot(dy);
        self.weight.grad_view2_mut().scaled_add(1.0, &dw);
        if let Some(b) = self.bias.as_mut() {
            b.grad_view1_mut().scaled_add(1.0, &dy.sum_axis(Axis(0)));
        }
        dy.dot(&self.weight.view2().t())
    }

    fn params(&self) -> Vec<&Tensor> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            eps: 1e-5,
        }
    }
}

impl Layer for LayerNorm {
    type Cache = LayerNormCache;

    fn forward(&self, x: &Array2<f64>, _ctx: &Ctx) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *s = 1.0 / (var + self.eps).sqrt();
            row *= *s;
        }
        let y = &xhat * &self.gamma.view1() + &self.beta.view1();
        (y, LayerNormCache { xhat, inv_std })
    }

    fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let d = dy.ncols() as f64;
        self.gamma
            .grad_view1_mut()
            .scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
        self.beta
            .grad_view1_mut()
            .scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let dxhat = dy * &self.gamma.view1();
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, g), xh), &s) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let sum_g = g.sum();
            let sum_gx = g.dot(&xh);
            for ((o, &gi), &xi) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
                *o = s / d * (d * gi - sum_g - xi * sum_gx);
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    /// Tanh approximation of GELU.
    #[default]
    Gelu,
    Relu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            }
        }
    }
}

/// Position-wise `Linear -> activation -> Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub activation: Activation,
}

pub struct FeedForwardCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl FeedForward {
    pub fn xavier<R: Rng>(d_model: usize, d_ff: usize, activation: Activation, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::xavier(d_model, d_ff, true, rng),
            down: Linear::xavier(d_ff, d_model, true, rng),
            activation,
        }
    }
}

impl Layer for FeedForward {
    type Cache = FeedForwardCache;

    fn forward(&self, x: &Array2<f64>, _ctx: &Ctx) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.up.apply(&x.view());
        let act = self.activation;
        let hidden = pre.mapv(|v| act.apply(v));
        let y = self.down.apply(&hidden.view());
        (
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                hidden,
            },
        )
    }

    fn backward(&mut self, cache: &FeedForwardCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut dh = self.down.backward(&cache.hidden, dy);
        let act = self.activation;
        ndarray::Zip::from(&mut dh)
            .and(&cache.pre)
            .for_each(|g, &z| *g *= act.derivative(z));
        self.up.backward(&cache.x, &dh)
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.up.params();
        p.extend(self.down.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.up.params_mut();
        p.extend(self.down.params_mut());
        p
    }
}

pub type DropoutCache = Option<Array2<f64>>;

/// Inverted dropout driven by a counter-based generator: the keep decision
/// for an element is a pure function of (seed, step, layer id, element index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
    pub layer_id: u64,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` keyed by four counters.
pub fn counter_uniform(seed: u64, step: u64, layer: u64, element: u64) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ step) ^ layer) ^ element);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl Dropout {
    pub fn new(p: f64, layer_id: u64) -> Self {
        Dropout { p, layer_id }
    }
}

impl Layer for Dropout {
    /// Multipliers (0 or 1/(1-p)); `None` when the layer is the identity.
    type Cache = DropoutCache;

    fn forward(&self, x: &Array2<f64>, ctx: &Ctx) -> (Array2<f64>, Self::Cache) {
        match ctx.mode {
            Mode::Train { seed, step } if self.p > 0.0 => {
                let cols = x.ncols() as u64;
                let scale = 1.0 / (1.0 - self.p);
                let base = ctx.row_offset * cols;
                let mut mult = Array2::zeros(x.raw_dim());
                for (k, m) in mult.iter_mut().enumerate() {
                    let u = counter_uniform(seed, step, self.layer_id, base + k as u64);
                    *m = if u >= self.p { scale } else { 0.0 };
                }
                (x * &mult, Some(mult))
            }
            _ => (x.clone(), None),
        }
    }

    fn backward(&mut self, cache: &Self::Cache, dy: &Array2<f64>) -> Array2<f64> {
        match cache {
            Some(mult) => dy * mult,
            None => dy.clone(),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }
}

/// Index window `[start, end)` averaged into output position `i`.
pub fn pool_window(i: usize, input_len: usize, target: usize) -> (usize, usize) {
    let start = i * input_len / target;
    let end = ((i + 1) * input_len).div_ceil(target);
    (start, end)
}

/// Adaptive 1-d average pooling of every row from `L` to `target` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptiveAvgPool1d {
    pub target: usize,
}

impl AdaptiveAvgPool1d {
    pub fn pool_slice(&self, x: &[f64], out: &mut [f64]) {
        let l = x.len();
        for (i, o) in out.iter_mut().enumerate().take(self.target) {
            let (s, e) = pool_window(i, l, self.target);
            *o = x[s..e].iter().sum::<f64>() / (e - s) as f64;
        }
    }
}

impl Layer for AdaptiveAvgPool1d {
    type Cache = usize;

    fn forward(&self, x: &Array2<f64>, _ctx: &Ctx) -> (Array2<f64>, usize) {
        let mut y = Array2::zeros((x.nrows(), self.target));
        for (row, mut out) in x.rows().into_iter().zip(y.rows_mut()) {
            let row = row.to_vec();
            self.pool_slice(&row, out.as_slice_mut().expect("standard layout"));
        }
        (y, x.ncols())
    }

    fn backward(&mut self, input_len: &usize, dy: &Array2<f64>) -> Array2<f64> {
        let l = *input_len;
        let mut dx = Array2::zeros((dy.nrows(), l));
        for (g, mut out) in dy.rows().into_iter().zip(dx.rows_mut()) {
            for (i, &gi) in g.iter().enumerate() {
                let (s, e) = pool_window(i, l, self.target);
                let share = gi / (e - s) as f64;
                out.slice_mut(ndarray::s![s..e]).mapv_inplace(|v| v + share);
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }
}

/// Column-wise concatenation of two row-aligned blocks.
pub fn concat(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

/// Split an upstream gradient of `concat(a, b)` back into its two blocks.
pub fn concat_backward(dy: &Array2<f64>, left_cols: usize) -> (Array2<f64>, Array2<f64>) {
    (
        dy.slice(ndarray::s![.., ..left_cols]).to_owned(),
        dy.slice(ndarray::s![.., left_cols..]).to_owned(),
    )
}

/// Mean over the tokens of each sequence: `[n * seq, d] -> [n, d]`.
pub fn sequence_mean(x: &Array2<f64>, seq_len: usize) -> Array2<f64> {
    let n = x.nrows() / seq_len;
    let mut y = Array2::zeros((n, x.ncols()));
    for (s, mut out) in y.rows_mut().into_iter().enumerate() {
        let block = x.slice(ndarray::s![s * seq_len..(s + 1) * seq_len, ..]);
        out.assign(&block.mean_axis(Axis(0)).expect("non-empty sequence"));
    }
    y
}

pub fn sequence_mean_backward(dy: &Array2<f64>, seq_len: usize) -> Array2<f64> {
    let mut dx = Array2::zeros((dy.nrows() * seq_len, dy.ncols()));
    let scale = 1.0 / seq_len as f64;
    for (s, g) in dy.rows().into_iter().enumerate() {
        for t in 0..seq_len {
            dx.row_mut(s * seq_len + t).scaled_add(scale, &g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_even_split() {
        let p = AdaptiveAvgPool1d { target: 2 };
        let mut out = [0.0; 2];
        p.pool_slice(&[1.0, 3.0, 5.0, 9.0], &mut out);
        assert_eq!(out, [2.0, 7.0]);
    }

    #[test]
    fn pool_upsamples_by_repetition() {
        let p = AdaptiveAvgPool1d { target: 4 };
        let mut out = [0.0; 4];
        p.pool_slice(&[1.5, -2.0], &mut out);
        assert_eq!(out, [1.5, 1.5, -2.0, -2.0]);
    }

    #[test]
    fn pool_identity_when_lengths_match() {
        let p = AdaptiveAvgPool1d { target: 5 };
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let mut out = [0.0; 5];
        p.pool_slice(&x, &mut out);
        assert_eq!(out, x);
    }

    #[test]
    fn pool_windows_cover_input() {
        for l in 1..40 {
            for t in 1..40 {
                let mut covered = vec![false; l];
                for i in 0..t {
                    let (s, e) = pool_window(i, l, t);
                    assert!(s < e && e <= l, "l={l} t={t} i={i}");
                    covered[s..e].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_repeatable() {
        let d = Dropout::new(0.2, 3);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64);
        let (a, _) = d.forward(&x, &Ctx::eval(1));
        let (b, _) = d.forward(&x, &Ctx::eval(1));
        assert_eq!(a, x);
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_train_is_inverted_and_keyed() {
        let d = Dropout::new(0.25, 1);
        let x = Array2::ones((200, 50));
        let ctx = Ctx {
            mode: Mode::Train { seed: 9, step: 4 },
            seq_len: 1,
            row_offset: 0,
        };
        let (y, _) = d.forward(&x, &ctx);
        let (y2, _) = d.forward(&x, &ctx);
        assert_eq!(y, y2);
        let mean = y.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        // chunking rows does not change the draws
        let (tail, _) = d.forward(
            &x.slice(ndarray::s![100.., ..]).to_owned(),
            &Ctx {
                row_offset: 100,
                ..ctx
            },
        );
        assert_eq!(tail, y.slice(ndarray::s![100.., ..]));
    }

    #[test]
    fn relu_feedforward_gradient_away_from_kinks() {
        use crate::engine::gradcheck::check_layer;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ffn = FeedForward::xavier(4, 8, Activation::Relu, &mut rng);
        let mut checked = 0;
        for seed in 0..50u64 {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0));
            let pre = ffn.up.apply(&x.view());
            if pre.iter().any(|v| v.abs() < 0.05) {
                continue;
            }
            let c = check_layer(&ffn, &x, &Ctx::eval(1), seed, 1e-5);
            assert!(c.worst() < 1e-6, "{c:?}");
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn layernorm_output_is_standardised() {
        let ln = LayerNorm::new(6);
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i as f64 + 1.0) * (j as f64).sin());
        let (y, _) = ln.forward(&x, &Ctx::eval(1));
        for row in y.rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
        }
    }
}
