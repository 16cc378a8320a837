//! Log transforms of route attributes, context assembly and quadratic
//! expansion.
//!
//! Column layout of the context feature vector (97 columns):
//! `[IVTT, Fare, WT, NoT | card one-hot (Student, Adult, Senior) | origin
//! land-use (30) | destination land-use (30) | transfer land-use (30)]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    pad_and_mask, ChoiceObservation, FeatureMatrix, Route, CARD_DIM, LANDUSE_DIM,
    LANDUSE_NAMES, POLICY_DIM, POLICY_NAMES,
};

pub const CONTEXT_DIM: usize = POLICY_DIM + CARD_DIM + 3 * LANDUSE_DIM;

/// First column of each block of the context row.
pub const CARD_START: usize = POLICY_DIM;
pub const ORIGIN_START: usize = CARD_START + CARD_DIM;
pub const DEST_START: usize = ORIGIN_START + LANDUSE_DIM;
pub const TRANSFER_START: usize = DEST_START + LANDUSE_DIM;

/// Hard ceiling on expanded column count.
pub const MAX_EXPANDED_COLUMNS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformSpec {
    pub ivtt_floor_minutes: f64,
    pub fare_floor_dollars: f64,
    pub walk_offset_seconds: f64,
    pub transfers_offset: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec {
            ivtt_floor_minutes: 2.0,
            fare_floor_dollars: 0.92,
            walk_offset_seconds: 1.0,
            transfers_offset: 1.0,
        }
    }
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ivtt_floor_minutes,
            self.fare_floor_dollars,
            self.walk_offset_seconds,
            self.transfers_offset,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::config("transform floors and offsets must be strictly positive"))
        }
    }

    /// Transform raw policy attributes given in storage units (seconds,
    /// cents, seconds, count). Accepts real values so attributes can be
    /// perturbed continuously.
    pub fn transform_raw(&self, raw: [f64; POLICY_DIM]) -> [f64; POLICY_DIM] {
        let [ivtt_s, fare_c, walk_s, transfers] = raw;
        [
            (ivtt_s / 60.0).max(self.ivtt_floor_minutes).ln(),
            (fare_c / 100.0).max(self.fare_floor_dollars).ln(),
            ((walk_s + self.walk_offset_seconds) / 60.0).ln(),
            (transfers + self.transfers_offset).ln(),
        ]
    }
}

/// Policy attribute, in policy-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    #[serde(rename = "IVTT")]
    Ivtt,
    Fare,
    #[serde(rename = "WT")]
    Walk,
    #[serde(rename = "NoT")]
    Transfers,
}

impl Attribute {
    pub const ALL: [Attribute; POLICY_DIM] =
        [Attribute::Ivtt, Attribute::Fare, Attribute::Walk, Attribute::Transfers];

    pub fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        POLICY_NAMES[self.column()]
    }
}

/// Raw policy attributes of a route as reals.
pub fn raw_attributes(r: &Route) -> [f64; POLICY_DIM] {
    [
        r.ivtt_seconds as f64,
        r.fare_cents as f64,
        r.walk_transfer_seconds as f64,
        r.num_transfers as f64,
    ]
}

pub fn transform_route(r: &Route, spec: &TransformSpec) -> [f64; POLICY_DIM] {
    spec.transform_raw(raw_attributes(r))
}

/// Unpadded feature row for one alternative.
pub fn route_row(
    r: &Route,
    card: crate::types::CardType,
    spec: &TransformSpec,
    with_context: bool,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(if with_context { CONTEXT_DIM } else { POLICY_DIM });
    row.extend_from_slice(&transform_route(r, spec));
    if with_context {
        row.extend_from_slice(&card.one_hot());
        row.extend_from_slice(&r.origin_landuse);
        row.extend_from_slice(&r.dest_landuse);
        row.extend_from_slice(&r.transfer_landuse);
    }
    row
}

pub fn assemble_features(
    obs: &ChoiceObservation,
    spec: &TransformSpec,
    with_context: bool,
) -> Result<FeatureMatrix> {
    let d = if with_context { CONTEXT_DIM } else { POLICY_DIM };
    let n = obs.alternatives.len();
    let mut raw = Array2::zeros((n, d));
    for (i, r) in obs.alternatives.iter().enumerate() {
        let row = route_row(r, obs.card_type, spec, with_context);
        raw.row_mut(i)
            .iter_mut()
            .zip(row)
            .for_each(|(dst, v)| *dst = v);
    }
    pad_and_mask(obs, &raw, POLICY_DIM)
}

/// Names of the unexpanded columns.
pub fn base_column_names(with_context: bool) -> Vec<String> {
    let mut names: Vec<String> = POLICY_NAMES.iter().map(|s| s.to_string()).collect();
    if with_context {
        names.extend(["Student", "Adult", "Senior"].iter().map(|s| format!("Card:{s}")));
        for prefix in ["O", "D", "T"] {
            names.extend(LANDUSE_NAMES.iter().map(|s| format!("{prefix}:{s}")));
        }
    }
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpansionMode {
    None,
    JointQuadratic,
    SeparatedQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionSpec {
    pub mode: ExpansionMode,
    pub policy_dim: usize,
}

impl ExpansionSpec {
    pub fn new(mode: ExpansionMode) -> Self {
        ExpansionSpec {
            mode,
            policy_dim: POLICY_DIM,
        }
    }

    /// Output column count and expanded policy-block width for `d` inputs.
    pub fn output_dims(&self, d: usize) -> (usize, usize) {
        let p = self.policy_dim.min(d);
        match self.mode {
            ExpansionMode::None => (d, p),
            ExpansionMode::JointQuadratic => (quadratic_len(d), quadratic_len(p)),
            ExpansionMode::SeparatedQuadratic => {
                (quadratic_len(p) + quadratic_len(d - p), quadratic_len(p))
            }
        }
    }
}

/// Width of a joint quadratic expansion of `d` inputs: linear terms plus all
/// products `x_i x_j` with `i <= j`.
pub const fn quadratic_len(d: usize) -> usize {
    d + d * (d + 1) / 2
}

/// Append the joint quadratic expansion of `x` to `out`: linear terms first,
/// then upper-triangular products in row-major order.
pub fn expand_quadratic_into(x: &[f64], out: &mut Vec<f64>) {
    out.extend_from_slice(x);
    for i in 0..x.len() {
        let xi = x[i];
        out.extend(x[i..].iter().map(|&xj| xi * xj));
    }
}

/// Expand one unpadded feature row according to `spec`.
pub fn expand_row(x: &[f64], spec: &ExpansionSpec, out: &mut Vec<f64>) {
    out.clear();
    match spec.mode {
        ExpansionMode::None => out.extend_from_slice(x),
        ExpansionMode::JointQuadratic => expand_quadratic_into(x, out),
        ExpansionMode::SeparatedQuadratic => {
            let p = spec.policy_dim.min(x.len());
            expand_quadratic_into(&x[..p], out);
            expand_quadratic_into(&x[p..], out);
        }
    }
}

/// Index pairs `(i, j)`, `i <= j`, of the product columns of a joint
/// expansion, in column order.
pub fn quadratic_pairs(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| (i..d).map(move |j| (i, j)))
}

/// Provenance of an expanded column: the one or two base columns it was
/// built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnSource {
    Linear(usize),
    Product(usize, usize),
}

pub fn expanded_provenance(d: usize, spec: &ExpansionSpec) -> Vec<ColumnSource> {
    let block = |offset: usize, width: usize| {
        (0..width)
            .map(move |i| ColumnSource::Linear(offset + i))
            .chain(quadratic_pairs(width).map(move |(i, j)| ColumnSource::Product(offset + i, offset + j)))
    };
    match spec.mode {
        ExpansionMode::None => (0..d).map(ColumnSource::Linear).collect(),
        ExpansionMode::JointQuadratic => block(0, d).collect(),
        ExpansionMode::SeparatedQuadratic => {
            let p = spec.policy_dim.min(d);
            block(0, p).chain(block(p, d - p)).collect()
        }
    }
}

pub fn expanded_names(base: &[String], spec: &ExpansionSpec) -> Vec<String> {
    expanded_provenance(base.len(), spec)
        .into_iter()
        .map(|src| match src {
            ColumnSource::Linear(i) => base[i].clone(),
            ColumnSource::Product(i, j) => format!("{}×{}", base[i], base[j]),
        })
        .collect()
}

pub fn expand(fm: &FeatureMatrix, spec: &ExpansionSpec) -> Result<FeatureMatrix> {
    let d = fm.feature_dim();
    let (out_dim, policy_out) = spec.output_dims(d);
    if out_dim > MAX_EXPANDED_COLUMNS {
        return Err(Error::structural(format!(
            "expansion of {d} columns yields {out_dim}, above the budget of {MAX_EXPANDED_COLUMNS}"
        )));
    }
    let mut values = Array2::zeros((fm.values.nrows(), out_dim));
    let mut buf = Vec::with_capacity(out_dim);
    for (i, row) in fm.values.rows().into_iter().enumerate() {
        if !fm.mask[i] {
            continue;
        }
        let x: Vec<f64> = row.to_vec();
        expand_row(&x, spec, &mut buf);
        values
            .row_mut(i)
            .iter_mut()
            .zip(&buf)
            .for_each(|(dst, &v)| *dst = v);
    }
    Ok(FeatureMatrix {
        values,
        mask: fm.mask.clone(),
        chosen: fm.chosen,
        policy_dim: policy_out,
    })
}
