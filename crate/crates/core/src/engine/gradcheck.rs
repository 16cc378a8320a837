//! Central finite-difference oracle for checking analytic gradients.
//!
//! Kept independent of the backward passes it verifies: it only calls
//! `forward` and compares against whatever `backward` produced.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Ctx, Layer};

pub const DEFAULT_STEP: f64 = 1e-3;

/// `|a - b| / max(|a| + |b|, tiny)` over whole vectors (Euclidean norms).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na + nb;
    if denom < 1e-300 {
        0.0
    } else {
        diff / denom
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCheck {
    pub input_error: f64,
    pub param_error: f64,
}

impl LayerCheck {
    pub fn worst(&self) -> f64 {
        self.input_error.max(self.param_error)
    }
}

fn contract(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

/// Check a layer's input and parameter gradients for the scalar probe loss
/// `sum(forward(x) * R)` with random `R`.
pub fn check_layer<L: Layer + Clone>(layer: &L, x: &Array2<f64>, ctx: &Ctx, seed: u64, h: f64) -> LayerCheck {
    let (y0, _) = layer.forward(x, ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let r = Array2::from_shape_fn(y0.raw_dim(), |_| rng.random_range(-1.0..1.0));

    let mut analytic = layer.clone();
    for p in analytic.params_mut() {
        p.zero_grad();
        p.grad_mut();
    }
    let (_, cache) = analytic.forward(x, ctx);
    let dx = analytic.backward(&cache, &r);
    let param_grads: Vec<f64> = analytic
        .params()
        .iter()
        .flat_map(|p| p.grad().expect("allocated above").to_vec())
        .collect();

    let shape = x.raw_dim();
    let numeric_dx = central_difference(x.as_slice().expect("standard layout"), h, |v| {
        let xv = Array2::from_shape_vec(shape, v.to_vec()).expect("same shape");
        contract(&layer.forward(&xv, ctx).0, &r)
    });

    let flat: Vec<f64> = layer.params().iter().flat_map(|p| p.data().to_vec()).collect();
    let numeric_params = central_difference(&flat, h, |v| {
        let mut probe = layer.clone();
        let mut offset = 0;
        for p in probe.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&v[offset..offset + n]);
            offset += n;
        }
        contract(&probe.forward(x, ctx).0, &r)
    });

    LayerCheck {
        input_error: relative_error(&dx.iter().copied().collect::<Vec<_>>(), &numeric_dx),
        param_error: relative_error(&param_grads, &numeric_params),
    }
}

/// Column-swap concatenation `[x_right | x_left]`, exercising
/// [`concat`](super::layers::concat) and its backward pass.
#[derive(Debug, Clone, Copy)]
pub struct ConcatProbe {
    pub left_cols: usize,
}

impl Layer for ConcatProbe {
    type Cache = usize;

    fn forward(&self, x: &Array2<f64>, _ctx: &Ctx) -> (Array2<f64>, usize) {
        let left = x.slice(ndarray::s![.., ..self.left_cols]);
        let right = x.slice(ndarray::s![.., self.left_cols..]);
        (super::layers::concat(&right, &left), x.ncols() - self.left_cols)
    }

    fn backward(&mut self, right_cols: &usize, dy: &Array2<f64>) -> Array2<f64> {
        let (dr, dl) = super::layers::concat_backward(dy, *right_cols);
        super::layers::concat(&dl.view(), &dr.view())
    }

    fn params(&self) -> Vec<&super::Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut super::Tensor> {
        Vec::new()
    }
}

/// Token mean over each sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceMeanProbe;

impl Layer for SequenceMeanProbe {
    type Cache = usize;

    fn forward(&self, x: &Array2<f64>, ctx: &Ctx) -> (Array2<f64>, usize) {
        (super::layers::sequence_mean(x, ctx.seq_len), ctx.seq_len)
    }

    fn backward(&mut self, seq: &usize, dy: &Array2<f64>) -> Array2<f64> {
        super::layers::sequence_mean_backward(dy, *seq)
    }

    fn params(&self) -> Vec<&super::Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut super::Tensor> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub layer: &'static str,
    pub shape: (usize, usize),
    pub seed: u64,
    pub check: LayerCheck,
}

/// Gradient check of every layer type over `seeds` random draws and three
/// input shapes each.
pub fn run_layer_suite(seeds: &[u64]) -> Vec<SuiteEntry> {
    use super::attention::{EncoderDims, EncoderLayer, MultiHeadAttention, NormPlacement};
    use super::layers::{Activation, AdaptiveAvgPool1d, Dropout, FeedForward, LayerNorm, Linear, Mode};

    // (rows, cols, seq_len)
    const SHAPES: [(usize, usize, usize); 3] = [(3, 4, 3), (6, 8, 3), (8, 12, 4)];
    let mut out = Vec::new();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(rows, cols, seq) in &SHAPES {
            let x = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5));
            let eval = Ctx::eval(seq);
            let train = Ctx {
                mode: Mode::Train { seed, step: 7 },
                seq_len: seq,
                row_offset: 3,
            };
            let mut push = |layer: &'static str, check: LayerCheck| {
                out.push(SuiteEntry {
                    layer,
                    shape: (rows, cols),
                    seed,
                    check,
                })
            };
            let h = DEFAULT_STEP;
            push(
                "Linear",
                check_layer(&Linear::xavier(cols, cols + 2, true, &mut rng), &x, &eval, seed, h),
            );
            push(
                "Linear(no bias)",
                check_layer(&Linear::xavier(cols, 3, false, &mut rng), &x, &eval, seed, h),
            );
            let mut ln = LayerNorm::new(cols);
            for p in [&mut ln.gamma, &mut ln.beta] {
                p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            }
            push("LayerNorm", check_layer(&ln, &x, &eval, seed, h));
            push(
                "FeedForward",
                check_layer(&FeedForward::xavier(cols, 2 * cols, Activation::Gelu, &mut rng), &x, &eval, seed, h),
            );
            push("Dropout", check_layer(&Dropout::new(0.3, 5), &x, &train, seed, h));
            push(
                "AdaptiveAvgPool1d(down)",
                check_layer(&AdaptiveAvgPool1d { target: cols / 2 + 1 }, &x, &eval, seed, h),
            );
            push(
                "AdaptiveAvgPool1d(up)",
                check_layer(&AdaptiveAvgPool1d { target: cols + 3 }, &x, &eval, seed, h),
            );
            push("Concat", check_layer(&ConcatProbe { left_cols: cols / 2 }, &x, &eval, seed, h));
            push("SequenceMean", check_layer(&SequenceMeanProbe, &x, &eval, seed, h));
            let heads = 2;
            let attn = MultiHeadAttention::xavier(cols, heads, cols / heads, cols / heads, &mut rng);
            push("MultiHeadAttention", check_layer(&attn, &x, &eval, seed, h));
            let dims = EncoderDims {
                d_model: cols,
                heads,
                d_k: cols / heads,
                d_v: cols / heads,
                d_ff: 2 * cols,
                activation: Activation::Gelu,
            };
            for (name, norm) in [("Encoder(post-norm)", NormPlacement::Post), ("Encoder(pre-norm)", NormPlacement::Pre)] {
                let enc = EncoderLayer::xavier(dims, 0.2, norm, 0, &mut rng);
                push(name, check_layer(&enc, &x, &train, seed, h));
            }
            let token = Array2::from_shape_fn((rows, 1), |_| rng.random_range(-1.0..1.0));
            push(
                "TokenEmbedding",
                check_layer(&Linear::xavier(1, cols, true, &mut rng), &token, &eval, seed, h),
            );
            // loss layer: gradient with respect to utilities
            let n = cols.min(30);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mask: Vec<bool> = (0..n).map(|i| i < n - 1).collect();
            let chosen = rows % (n - 1);
            let analytic = super::loss::masked_softmax_xent(&u, &mask, chosen)
                .expect("valid")
                .grad(chosen);
            let numeric = central_difference(&u, h, |v| {
                super::loss::masked_softmax_xent(v, &mask, chosen).expect("valid").loss
            });
            push(
                "MaskedSoftmaxCrossEntropy",
                LayerCheck {
                    input_error: relative_error(&analytic, &numeric),
                    param_error: 0.0,
                },
            );
        }
    }
    out
}
