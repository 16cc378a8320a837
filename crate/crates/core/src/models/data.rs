//! Observations grouped by distinct choice set.
//!
//! Travellers sharing an OD pair and card type face the same feature matrix,
//! so each distinct matrix is stored once and observations only carry a set
//! id and their chosen row. Likelihoods are then sums over sets weighted by
//! how often each alternative was chosen.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use super::pathsize::path_size;
use crate::error::{Error, Result};
use crate::features::{route_row, TransformSpec, CONTEXT_DIM};
use crate::types::{ChoiceObservation, MAX_ALTERNATIVES, POLICY_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceData {
    feature_dim: usize,
    /// Unexpanded feature rows of every distinct set, stacked.
    x: Array2<f64>,
    /// `ln PS` per row, when path sizes were requested.
    ln_ps: Option<Vec<f64>>,
    offsets: Vec<usize>,
    obs_set: Vec<u32>,
    obs_chosen: Vec<u8>,
}

impl ChoiceData {
    pub fn from_observations(
        obs: &[ChoiceObservation],
        spec: &TransformSpec,
        with_context: bool,
        with_path_size: bool,
    ) -> Result<Self> {
        let d = if with_context { CONTEXT_DIM } else { POLICY_DIM };
        let mut index: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut flat: Vec<f64> = Vec::new();
        let mut ln_ps = Vec::new();
        let mut offsets = vec![0];
        let mut obs_set = Vec::with_capacity(obs.len());
        let mut obs_chosen = Vec::with_capacity(obs.len());
        for o in obs {
            o.validate()?;
            if o.alternatives.len() > MAX_ALTERNATIVES {
                return Err(Error::structural(format!(
                    "OD {:?} has {} alternatives, more than {MAX_ALTERNATIVES}",
                    o.od_pair,
                    o.alternatives.len()
                )));
            }
            let mut rows = Vec::with_capacity(o.alternatives.len() * d);
            for r in &o.alternatives {
                rows.extend(route_row(r, o.card_type, spec, with_context));
            }
            let ps = if with_path_size {
                path_size(&o.alternatives)?.ln_ps
            } else {
                Vec::new()
            };
            let key: Vec<u64> = rows.iter().chain(&ps).map(|v| v.to_bits()).collect();
            let next = index.len() as u32;
            let id = *index.entry(key).or_insert(next);
            if id == next {
                flat.extend_from_slice(&rows);
                ln_ps.extend_from_slice(&ps);
                offsets.push(flat.len() / d);
            }
            obs_set.push(id);
            obs_chosen.push(o.chosen as u8);
        }
        let n_rows = flat.len() / d;
        let x = Array2::from_shape_vec((n_rows, d), flat).expect("row-major buffer");
        Ok(ChoiceData {
            feature_dim: d,
            x,
            ln_ps: with_path_size.then_some(ln_ps),
            offsets,
            obs_set,
            obs_chosen,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_observations(&self) -> usize {
        self.obs_set.len()
    }

    pub fn n_sets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn ln_ps(&self) -> Option<&[f64]> {
        self.ln_ps.as_deref()
    }

    pub fn set_range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn set_rows(&self, s: usize) -> ArrayView2<'_, f64> {
        self.x.slice(ndarray::s![self.set_range(s), ..])
    }

    /// Set id and chosen row (within the set) of observation `n`.
    pub fn observation(&self, n: usize) -> (usize, usize) {
        (self.obs_set[n] as usize, self.obs_chosen[n] as usize)
    }

    /// Choice counts of a subset of observations, grouped by set.
    pub fn tally(&self, observations: &[usize]) -> Tally {
        let mut per_set: HashMap<usize, Vec<f64>> = HashMap::new();
        for &n in observations {
            let (s, c) = self.observation(n);
            let len = self.offsets[s + 1] - self.offsets[s];
            per_set.entry(s).or_insert_with(|| vec![0.0; len])[c] += 1.0;
        }
        let mut sets: Vec<usize> = per_set.keys().copied().collect();
        sets.sort_unstable();
        let mut counts = Vec::new();
        let mut bounds = Vec::with_capacity(sets.len() + 1);
        bounds.push(0);
        for s in &sets {
            counts.extend_from_slice(&per_set[s]);
            bounds.push(counts.len());
        }
        Tally {
            sets,
            bounds,
            counts,
            n_obs: observations.len(),
        }
    }

    pub fn tally_all(&self) -> Tally {
        self.tally(&(0..self.n_observations()).collect::<Vec<_>>())
    }
}

/// Per-alternative choice counts over the sets touched by a subset of
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    /// Distinct set ids, ascending.
    pub sets: Vec<usize>,
    /// `bounds[k]..bounds[k + 1]` are the entries of `counts` for `sets[k]`.
    pub bounds: Vec<usize>,
    pub counts: Vec<f64>,
    pub n_obs: usize,
}

impl Tally {
    pub fn n_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn set_counts(&self, k: usize) -> &[f64] {
        &self.counts[self.bounds[k]..self.bounds[k + 1]]
    }
}

/// Summed negative log-likelihood and summed (tie-fractional) correct
/// predictions of one set, given its utilities and choice counts.
///
/// A prediction is the utility argmax; when several alternatives tie for the
/// maximum, each tied chosen alternative earns `1 / ties` of a hit.
pub fn set_loss_and_hits(u: &[f64], counts: &[f64]) -> (f64, f64) {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + u.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let ties = u.iter().filter(|&&v| v == m).count() as f64;
    let mut loss = 0.0;
    let mut hits = 0.0;
    for (v, c) in u.iter().zip(counts) {
        if *c > 0.0 {
            loss += c * (lse - v);
            if *v == m {
                hits += c / ties;
            }
        }
    }
    (loss, hits)
}

/// Gradient of the summed loss of one set with respect to its utilities:
/// `N p_r - c_r`.
pub fn set_utility_gradient(u: &[f64], counts: &[f64], out: &mut [f64]) -> f64 {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = u.iter().map(|v| (v - m).exp()).sum();
    let total: f64 = counts.iter().sum();
    let lse = m + z.ln();
    let mut loss = 0.0;
    for ((o, v), c) in out.iter_mut().zip(u).zip(counts) {
        *o = total * (v - lse).exp() - c;
        loss += c * (lse - v);
    }
    loss
}
