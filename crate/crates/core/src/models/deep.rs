//! Neural utility models: the linear CNN, the quadratic CNN variants and the
//! Transformer models, all scoring one alternative at a time with shared
//! weights.
//!
//! Every model's utility is a sum of optional parts over the unexpanded row
//! `x = [policy (4) | context (d - 4)]`:
//!
//! * `policy · x_p` (always present)
//! * `context · x_c` (97-feature models)
//! * quadratic blocks `sum_{i<=j} q_ij x_i x_j` over a column range,
//!   evaluated as `x' M x` without materialising the expansion
//! * a Transformer path whose scalar output is `head · mean_t(enc(tokens))`
//!
//! The Transformer's final linear layer over `[encoder output | original
//! features]` is stored as its three pieces (`head`, `context`, `policy`),
//! which is the same map.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UtilityModel;
use crate::engine::attention::{EncoderCache, EncoderDims, EncoderLayer, NormPlacement};
use crate::engine::layers::{sequence_mean, sequence_mean_backward, Activation, Ctx, Layer, Linear};
use crate::engine::{AdaptiveAvgPool1d, Checkpoint, FreezeMask, NamedTensor, Tensor};
use crate::error::{Error, Result};
use crate::features::{base_column_names, expand_quadratic_into, quadratic_len, quadratic_pairs, CONTEXT_DIM};
use crate::types::{ParameterTable, POLICY_DIM};

pub const FARE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeepKind {
    #[serde(rename = "CNN1")]
    Cnn1,
    #[serde(rename = "CNN2U")]
    Cnn2U,
    #[serde(rename = "CNN2S")]
    Cnn2S,
    #[serde(rename = "CNN2C")]
    Cnn2C,
    #[serde(rename = "TFMU")]
    TfmU,
    #[serde(rename = "TFMC")]
    TfmC,
}

impl DeepKind {
    pub const ALL: [DeepKind; 6] = [
        DeepKind::Cnn1,
        DeepKind::Cnn2U,
        DeepKind::Cnn2S,
        DeepKind::Cnn2C,
        DeepKind::TfmU,
        DeepKind::TfmC,
    ];

    /// Kinds whose policy betas are copied from a fitted CNN 1 and frozen.
    pub fn is_constrained(self) -> bool {
        matches!(self, DeepKind::Cnn2C | DeepKind::TfmC)
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, DeepKind::TfmU | DeepKind::TfmC)
    }

    pub fn label(self) -> &'static str {
        match self {
            DeepKind::Cnn1 => "CNN 1",
            DeepKind::Cnn2U => "CNN 2U",
            DeepKind::Cnn2S => "CNN 2S",
            DeepKind::Cnn2C => "CNN 2C",
            DeepKind::TfmU => "TFM U",
            DeepKind::TfmC => "TFM C",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    /// Sequence length after adaptive pooling of the expanded features.
    pub pool: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub norm: NormPlacement,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            pool: 512,
            d_model: 512,
            heads: 4,
            d_k: 128,
            d_v: 128,
            d_ff: 2048,
            layers: 2,
            dropout: 0.2,
            activation: Activation::Gelu,
            norm: NormPlacement::Post,
        }
    }
}

impl TransformerConfig {
    /// Same layout with a narrower width: `d_model = pool = width`, head
    /// dims `width / heads`, `d_ff = 4 width`.
    pub fn scaled(width: usize) -> Self {
        let base = TransformerConfig::default();
        TransformerConfig {
            pool: width,
            d_model: width,
            d_k: width / base.heads,
            d_v: width / base.heads,
            d_ff: 4 * width,
            ..base
        }
    }

    fn is_default(&self) -> bool {
        *self == TransformerConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.pool, self.d_model, self.heads, self.d_k, self.d_v, self.d_ff, self.layers];
        if dims.contains(&0) {
            return Err(Error::config("transformer dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn dims(&self) -> EncoderDims {
        EncoderDims {
            d_model: self.d_model,
            heads: self.heads,
            d_k: self.d_k,
            d_v: self.d_v,
            d_ff: self.d_ff,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSpec {
    pub kind: DeepKind,
    /// 4 (policy only) or 97 (policy, card type, land use).
    pub feature_dim: usize,
    /// Model id or checkpoint path of the CNN 1 whose policy betas are
    /// frozen; required by the constrained kinds, forbidden otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_policy_source: Option<String>,
    #[serde(default, skip_serializing_if = "TransformerConfig::is_default")]
    pub transformer: TransformerConfig,
}

impl DeepSpec {
    pub fn new(kind: DeepKind, feature_dim: usize) -> Self {
        DeepSpec {
            kind,
            feature_dim,
            frozen_policy_source: None,
            transformer: TransformerConfig::default(),
        }
    }

    pub fn constrained(kind: DeepKind, source: impl Into<String>) -> Self {
        DeepSpec {
            frozen_policy_source: Some(source.into()),
            ..DeepSpec::new(kind, CONTEXT_DIM)
        }
    }

    pub fn with_transformer(mut self, t: TransformerConfig) -> Self {
        self.transformer = t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim != POLICY_DIM && self.feature_dim != CONTEXT_DIM {
            return Err(Error::config(format!(
                "feature_dim must be {POLICY_DIM} or {CONTEXT_DIM}, got {}",
                self.feature_dim
            )));
        }
        let needs_context = !matches!(self.kind, DeepKind::Cnn1 | DeepKind::Cnn2U);
        if needs_context && self.feature_dim != CONTEXT_DIM {
            return Err(Error::config(format!(
                "{} needs the {CONTEXT_DIM}-feature input",
                self.kind.label()
            )));
        }
        match (self.kind.is_constrained(), &self.frozen_policy_source) {
            (true, None) => {
                return Err(Error::config(format!(
                    "{} requires a fitted CNN 1 as frozen_policy_source",
                    self.kind.label()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::config(format!(
                    "{} is unconstrained and takes no frozen_policy_source",
                    self.kind.label()
                )))
            }
            _ => {}
        }
        if self.kind.is_transformer() {
            self.transformer.validate()?;
        }
        Ok(())
    }
}

/// Products `x_i x_j`, `i <= j`, over base columns `start..start + width`.
#[derive(Debug, Clone, PartialEq)]
struct QuadBlock {
    name: &'static str,
    start: usize,
    width: usize,
    weights: Tensor,
}

impl QuadBlock {
    fn new(name: &'static str, start: usize, width: usize) -> Self {
        QuadBlock {
            name,
            start,
            width,
            weights: Tensor::zeros(&[width * (width + 1) / 2]),
        }
    }

    /// Upper-triangular `M` with `x' M x = sum_{i<=j} q_ij x_i x_j`.
    fn matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.width, self.width));
        for (w, (i, j)) in self.weights.data().iter().zip(quadratic_pairs(self.width)) {
            m[[i, j]] = *w;
        }
        m
    }

    fn block<'a>(&self, x: &'a ArrayView2<f64>) -> ArrayView2<'a, f64> {
        x.slice_move(s![.., self.start..self.start + self.width])
    }

    fn add_utilities(&self, x: &ArrayView2<f64>, u: &mut Array1<f64>) {
        let xb = self.block(x);
        let xm = xb.dot(&self.matrix());
        *u += &(&xm * &xb).sum_axis(Axis(1));
    }

    fn backward(&mut self, x: &ArrayView2<f64>, g: &ArrayView1<f64>) {
        let xb = self.block(x);
        let weighted = &xb * &g.view().insert_axis(Axis(1));
        let gram = xb.t().dot(&weighted);
        let grad = self.weights.grad_mut();
        for (gw, (i, j)) in grad.iter_mut().zip(quadratic_pairs(self.width)) {
            *gw += gram[[i, j]];
        }
    }
}

/// Quadratic expansion, adaptive pooling to a token sequence, scalar token
/// embedding, encoder stack, mean over tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerPath {
    /// First base column fed to the encoder (0 = all features, 4 = context only).
    pub input_start: usize,
    pub pool: usize,
    pub embed: Linear,
    pub layers: Vec<EncoderLayer>,
    /// Final-layer weights on the encoder output.
    pub head: Tensor,
}

pub(crate) struct PathCache {
    embed: Array2<f64>,
    layers: Vec<EncoderCache>,
    mean: Array2<f64>,
}

impl TransformerPath {
    fn new(input_start: usize, cfg: &TransformerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Linear::xavier(1, cfg.d_model, true, &mut rng);
        let layers = (0..cfg.layers)
            .map(|l| EncoderLayer::xavier(cfg.dims(), cfg.dropout, cfg.norm, l as u64, &mut rng))
            .collect();
        // random head: a zero head would leave the encoder without gradient
        let mut head = Tensor::zeros(&[cfg.d_model]);
        head.data_mut()
            .copy_from_slice(Tensor::xavier_uniform(cfg.d_model, 1, &mut rng).data());
        TransformerPath {
            input_start,
            pool: cfg.pool,
            embed,
            layers,
            head,
        }
    }

    pub fn input_len(&self, feature_dim: usize) -> usize {
        quadratic_len(feature_dim - self.input_start)
    }

    /// Pooled expanded features (one token value per position) of every row.
    pub fn tokens(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let pool = AdaptiveAvgPool1d { target: self.pool };
        let mut out = Array2::zeros((x.nrows(), self.pool));
        let mut buf = Vec::new();
        for (row, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            buf.clear();
            let tail: Vec<f64> = row.iter().skip(self.input_start).copied().collect();
            expand_quadratic_into(&tail, &mut buf);
            pool.pool_slice(&buf, o.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn forward(&self, tokens: &ArrayView2<f64>, ctx: &Ctx) -> (Array1<f64>, PathCache) {
        let n = tokens.nrows();
        let flat = Array2::from_shape_vec((n * self.pool, 1), tokens.iter().copied().collect())
            .expect("token count");
        let ctx = Ctx {
            seq_len: self.pool,
            ..*ctx
        };
        let (mut h, embed) = self.embed.forward(&flat, &ctx);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&h, &ctx);
            caches.push(c);
            h = y;
        }
        let mean = sequence_mean(&h, self.pool);
        let u = mean.dot(&self.head.view1());
        (
            u,
            PathCache {
                embed,
                layers: caches,
                mean,
            },
        )
    }

    fn backward(&mut self, cache: &PathCache, g: &ArrayView1<f64>) {
        self.head.grad_view1_mut().scaled_add(1.0, &cache.mean.t().dot(g));
        let head = self.head.view1().insert_axis(Axis(0)).to_owned();
        let dmean = g.view().insert_axis(Axis(1)).dot(&head);
        let mut dh = sequence_mean_backward(&dmean, self.pool);
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            dh = layer.backward(c, &dh);
        }
        self.embed.backward(&cache.embed, &dh);
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.embed.params();
        for l in &self.layers {
            p.extend(l.params());
        }
        p.push(&self.head);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.embed.params_mut();
        for l in &mut self.layers {
            p.extend(l.params_mut());
        }
        p.push(&mut self.head);
        p
    }

    fn param_names(&self) -> Vec<String> {
        const ENCODER: [&str; 16] = [
            "attn.wq.weight",
            "attn.wq.bias",
            "attn.wk.weight",
            "attn.wk.bias",
            "attn.wv.weight",
            "attn.wv.bias",
            "attn.wo.weight",
            "attn.wo.bias",
            "ln1.gamma",
            "ln1.beta",
            "ffn.up.weight",
            "ffn.up.bias",
            "ffn.down.weight",
            "ffn.down.bias",
            "ln2.gamma",
            "ln2.beta",
        ];
        let mut names = vec!["tfm.embed.weight".to_string(), "tfm.embed.bias".to_string()];
        for (i, l) in self.layers.iter().enumerate() {
            let n = l.params().len();
            assert_eq!(n, ENCODER.len(), "encoder parameter layout changed");
            names.extend(ENCODER.iter().map(|p| format!("tfm.layer{i}.{p}")));
        }
        names.push("tfm.head".into());
        names
    }
}

/// A built deep model: parameters, freeze flags and the forward/backward
/// passes over blocks of alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepModel {
    spec: DeepSpec,
    policy: Tensor,
    context: Option<Tensor>,
    quads: Vec<QuadBlock>,
    tfm: Option<TransformerPath>,
    freeze: FreezeMask,
}

pub(crate) struct ChunkCache {
    path: Option<PathCache>,
}

impl DeepModel {
    /// Build from a spec. Constrained kinds copy and freeze the policy betas
    /// of `policy_source`, which must be a CNN 1 checkpoint.
    pub fn build(spec: &DeepSpec, policy_source: Option<&Checkpoint>, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut model = DeepModel::skeleton(spec, init_seed);
        match (spec.kind.is_constrained(), policy_source) {
            (true, Some(ckpt)) => {
                let betas = cnn1_policy(ckpt)?;
                model.policy.data_mut().copy_from_slice(&betas);
            }
            (true, None) => {
                return Err(Error::config(format!(
                    "{} needs the CNN 1 checkpoint named by frozen_policy_source",
                    spec.kind.label()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::config(format!(
                    "{} is unconstrained and cannot take a policy checkpoint",
                    spec.kind.label()
                )))
            }
            (false, None) => {}
        }
        Ok(model)
    }

    fn skeleton(spec: &DeepSpec, init_seed: u64) -> Self {
        let d = spec.feature_dim;
        let kind = spec.kind;
        let mut policy = Tensor::zeros(&[POLICY_DIM]);
        let fare_fixed = matches!(kind, DeepKind::Cnn1 | DeepKind::Cnn2S);
        if fare_fixed {
            policy.data_mut()[FARE] = -1.0;
        }
        let context = (d > POLICY_DIM).then(|| Tensor::zeros(&[d - POLICY_DIM]));
        let quads = match kind {
            DeepKind::Cnn2U => vec![QuadBlock::new("quad.joint", 0, d)],
            DeepKind::Cnn2S | DeepKind::Cnn2C => vec![
                QuadBlock::new("quad.policy", 0, POLICY_DIM),
                QuadBlock::new("quad.context", POLICY_DIM, d - POLICY_DIM),
            ],
            _ => Vec::new(),
        };
        let tfm = match kind {
            DeepKind::TfmU => Some(TransformerPath::new(0, &spec.transformer, init_seed)),
            DeepKind::TfmC => Some(TransformerPath::new(POLICY_DIM, &spec.transformer, init_seed)),
            _ => None,
        };
        let mut model = DeepModel {
            spec: spec.clone(),
            policy,
            context,
            quads,
            tfm,
            freeze: FreezeMask::from_masks(Vec::new()),
        };
        let mut masks: Vec<Vec<bool>> = model.params().iter().map(|t| vec![false; t.len()]).collect();
        if fare_fixed {
            masks[0][FARE] = true;
        }
        if kind.is_constrained() {
            masks[0].fill(true);
        }
        model.freeze = FreezeMask::from_masks(masks);
        model
    }

    pub fn spec(&self) -> &DeepSpec {
        &self.spec
    }

    pub fn kind(&self) -> DeepKind {
        self.spec.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn freeze_mask(&self) -> &FreezeMask {
        &self.freeze
    }

    pub fn transformer(&self) -> Option<&TransformerPath> {
        self.tfm.as_ref()
    }

    pub fn transformer_mut(&mut self) -> Option<&mut TransformerPath> {
        self.tfm.as_mut()
    }

    /// Coefficients of the four policy features in column order.
    pub fn policy_betas(&self) -> [f64; POLICY_DIM] {
        let mut b = [0.0; POLICY_DIM];
        b.copy_from_slice(self.policy.data());
        b
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.policy];
        p.extend(self.context.as_ref());
        p.extend(self.quads.iter().map(|q| &q.weights));
        if let Some(t) = &self.tfm {
            p.extend(t.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.policy];
        p.extend(self.context.as_mut());
        p.extend(self.quads.iter_mut().map(|q| &mut q.weights));
        if let Some(t) = &mut self.tfm {
            p.extend(t.params_mut());
        }
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["policy".to_string()];
        if self.context.is_some() {
            names.push("context".into());
        }
        names.extend(self.quads.iter().map(|q| q.name.to_string()));
        if let Some(t) = &self.tfm {
            names.extend(t.param_names());
        }
        names
    }

    /// All utility parameters, fixed entries included.
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.parameter_count() - self.freeze.frozen_count()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Copy of every gradient buffer, in parameter order.
    pub(crate) fn grads(&self) -> Vec<Vec<f64>> {
        self.params()
            .iter()
            .map(|t| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect()
    }

    pub(crate) fn add_grads(&mut self, grads: &[Vec<f64>]) {
        for (p, g) in self.params_mut().into_iter().zip(grads) {
            for (a, b) in p.grad_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    /// Encoder inputs for a block of rows, if the model has an encoder.
    pub fn tokens(&self, x: &ArrayView2<f64>) -> Option<Array2<f64>> {
        self.tfm.as_ref().map(|t| t.tokens(x))
    }

    /// Utilities of a block of unexpanded rows. `tokens` must come from
    /// [`DeepModel::tokens`] on the same rows when the model has an encoder.
    pub(crate) fn forward_chunk(
        &self,
        x: &ArrayView2<f64>,
        tokens: Option<&ArrayView2<f64>>,
        ctx: &Ctx,
    ) -> (Array1<f64>, ChunkCache) {
        let mut u = x.slice(s![.., ..POLICY_DIM]).dot(&self.policy.view1());
        if let Some(c) = &self.context {
            u += &x.slice(s![.., POLICY_DIM..]).dot(&c.view1());
        }
        for q in &self.quads {
            q.add_utilities(x, &mut u);
        }
        let path = self.tfm.as_ref().map(|t| {
            let tokens = tokens.expect("encoder tokens");
            let (v, cache) = t.forward(tokens, ctx);
            u += &v;
            cache
        });
        (u, ChunkCache { path })
    }

    /// Accumulate parameter gradients given `g = dLoss/du` for the rows of
    /// the matching forward call.
    pub(crate) fn backward_chunk(&mut self, x: &ArrayView2<f64>, cache: &ChunkCache, g: &ArrayView1<f64>) {
        let gp = x.slice(s![.., ..POLICY_DIM]).t().dot(g);
        self.policy.grad_view1_mut().scaled_add(1.0, &gp);
        if let Some(c) = &mut self.context {
            let gc = x.slice(s![.., POLICY_DIM..]).t().dot(g);
            c.grad_view1_mut().scaled_add(1.0, &gc);
        }
        for q in &mut self.quads {
            q.backward(x, g);
        }
        if let (Some(t), Some(pc)) = (&mut self.tfm, &cache.path) {
            t.backward(pc, g);
        }
    }

    /// Evaluation-mode utilities of arbitrary rows.
    pub fn utilities(&self, x: &ArrayView2<f64>) -> Vec<f64> {
        let tokens = self.tokens(x);
        let (u, _) = self.forward_chunk(x, tokens.as_ref().map(|t| t.view()).as_ref(), &Ctx::eval(1));
        u.to_vec()
    }

    /// Named utility weights (policy, context and quadratic terms); encoder
    /// internals are left to the checkpoint.
    pub fn parameter_table(&self) -> ParameterTable {
        let base = base_column_names(self.feature_dim() == CONTEXT_DIM);
        let mut names: Vec<String> = base[..POLICY_DIM].to_vec();
        let mut values = self.policy.data().to_vec();
        let mut frozen = self.freeze.tensor(0).to_vec();
        if let Some(c) = &self.context {
            names.extend(base[POLICY_DIM..].iter().cloned());
            values.extend_from_slice(c.data());
            frozen.extend(std::iter::repeat_n(false, c.len()));
        }
        for q in &self.quads {
            let cols = &base[q.start..q.start + q.width];
            names.extend(quadratic_pairs(q.width).map(|(i, j)| format!("{}×{}", cols[i], cols[j])));
            values.extend_from_slice(q.weights.data());
            frozen.extend(std::iter::repeat_n(false, q.weights.len()));
        }
        ParameterTable::new(names, values, frozen).expect("consistent lengths")
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_string(&self.spec).expect("spec serialises");
        let tensors = self
            .param_names()
            .into_iter()
            .zip(self.params())
            .enumerate()
            .map(|(i, (name, t))| NamedTensor {
                name,
                tensor: Tensor::from_vec(t.shape(), t.data().to_vec()).expect("same shape"),
                frozen: self.freeze.tensor(i).to_vec(),
            })
            .collect();
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec: DeepSpec = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::data(format!("checkpoint metadata is not a model spec: {e}")))?;
        spec.validate()?;
        let mut model = DeepModel::skeleton(&spec, 0);
        let names = model.param_names();
        let mut masks = Vec::with_capacity(names.len());
        for (name, p) in names.iter().zip(model.params_mut()) {
            let nt = ckpt
                .get(name)
                .ok_or_else(|| Error::data(format!("checkpoint lacks tensor `{name}`")))?;
            if nt.tensor.shape() != p.shape() {
                return Err(Error::data(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    nt.tensor.shape(),
                    p.shape()
                )));
            }
            p.data_mut().copy_from_slice(nt.tensor.data());
            masks.push(nt.frozen.clone());
        }
        model.freeze = FreezeMask::from_masks(masks);
        Ok(model)
    }
}

/// Policy betas of a CNN 1 checkpoint.
pub fn cnn1_policy(ckpt: &Checkpoint) -> Result<[f64; POLICY_DIM]> {
    let spec: DeepSpec = serde_json::from_str(&ckpt.meta)
        .map_err(|e| Error::data(format!("policy source metadata is not a model spec: {e}")))?;
    if spec.kind != DeepKind::Cnn1 {
        return Err(Error::config(format!(
            "frozen policy source must be a CNN 1, found {}",
            spec.kind.label()
        )));
    }
    let t = ckpt
        .get("policy")
        .ok_or_else(|| Error::data("policy source has no `policy` tensor"))?;
    if t.tensor.len() != POLICY_DIM {
        return Err(Error::data("policy tensor must hold four betas"));
    }
    let mut b = [0.0; POLICY_DIM];
    b.copy_from_slice(t.tensor.data());
    Ok(b)
}

impl UtilityModel for DeepModel {
    fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn set_utilities(&self, rows: &ArrayView2<f64>, _ln_ps: Option<&[f64]>) -> Vec<f64> {
        self.utilities(rows)
    }
}
