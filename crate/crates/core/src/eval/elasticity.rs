//! Disaggregate point elasticities of choice probabilities by central finite
//! differences on raw route attributes.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{raw_attributes, route_row, Attribute, TransformSpec, CONTEXT_DIM};
use crate::models::{path_size, UtilityModel};
use crate::types::{ChoiceObservation, MeanStd, NodeId, POLICY_DIM};

/// Probabilities below this are treated as undefined points.
pub const MIN_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityCurve {
    pub attribute: Attribute,
    /// Attribute values in raw units (seconds, cents, seconds, count).
    pub grid: Vec<f64>,
    pub mean_elasticity: Vec<f64>,
    /// One standard deviation across the sampled observations.
    pub std_band: Vec<f64>,
    /// Observations with a defined elasticity at each grid point.
    pub n_points: Vec<usize>,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticityOptions {
    pub n_od: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for ElasticityOptions {
    fn default() -> Self {
        ElasticityOptions {
            n_od: 1000,
            grid_points: 25,
            seed: 0,
        }
    }
}

/// Finite-difference step for an attribute value.
pub fn step_size(x: f64) -> f64 {
    (1e-4 * x.abs()).max(1e-6)
}

/// One alternative of one observation, ready for repeated perturbation.
struct Probe {
    /// Feature row of the probed alternative.
    row: Vec<f64>,
    raw: [f64; POLICY_DIM],
    ln_ps: f64,
    /// Utilities of the other alternatives.
    others: Vec<f64>,
}

impl Probe {
    fn new(model: &dyn UtilityModel, obs: &ChoiceObservation, alt: usize, transform: &TransformSpec) -> Result<Self> {
        let d = model.feature_dim();
        if d != POLICY_DIM && d != CONTEXT_DIM {
            return Err(Error::structural(format!("unsupported feature width {d}")));
        }
        let route = obs
            .alternatives
            .get(alt)
            .ok_or_else(|| Error::structural(format!("alternative {alt} out of range")))?;
        let m = obs.alternatives.len();
        let mut rows = Array2::zeros((m, d));
        for (r, mut out) in obs.alternatives.iter().zip(rows.rows_mut()) {
            for (o, v) in out.iter_mut().zip(route_row(r, obs.card_type, transform, d == CONTEXT_DIM)) {
                *o = v;
            }
        }
        let ln_ps = path_size(&obs.alternatives)?.ln_ps;
        let u = model.set_utilities(&rows.view(), Some(&ln_ps));
        let others = u.iter().enumerate().filter(|&(j, _)| j != alt).map(|(_, v)| *v).collect();
        Ok(Probe {
            row: rows.row(alt).to_vec(),
            raw: raw_attributes(route),
            ln_ps: ln_ps[alt],
            others,
        })
    }

    /// `ln P` of the probed alternative at utility `v`. Near-certain
    /// alternatives go through `ln_1p` so `1 - P` keeps its precision.
    fn log_probability(&self, v: f64) -> f64 {
        let m = self.others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if v >= m {
            -self.others.iter().map(|u| (u - v).exp()).sum::<f64>().ln_1p()
        } else {
            (v - m) - ((v - m).exp() + self.others.iter().map(|u| (u - m).exp()).sum::<f64>()).ln()
        }
    }

    /// Point elasticities at each value of `xs`; `None` where the
    /// probability is below [`MIN_PROBABILITY`].
    fn elasticities(
        &self,
        model: &dyn UtilityModel,
        attribute: Attribute,
        xs: &[f64],
        transform: &TransformSpec,
    ) -> Vec<Option<f64>> {
        let d = self.row.len();
        let mut rows = Array2::zeros((3 * xs.len(), d));
        for (k, &x) in xs.iter().enumerate() {
            let h = step_size(x);
            for (j, v) in [x - h, x, x + h].into_iter().enumerate() {
                let mut raw = self.raw;
                raw[attribute.column()] = v;
                let mut out = rows.row_mut(3 * k + j);
                out.assign(&ndarray::ArrayView1::from(&self.row));
                out.slice_mut(s![..POLICY_DIM])
                    .assign(&ndarray::ArrayView1::from(&transform.transform_raw(raw)));
            }
        }
        let ln_ps = vec![self.ln_ps; rows.nrows()];
        let u = model.set_utilities(&rows.view(), Some(&ln_ps));
        xs.iter()
            .enumerate()
            .map(|(k, &x)| {
                if self.log_probability(u[3 * k + 1]) < MIN_PROBABILITY.ln() {
                    return None;
                }
                // d ln P / d x, differenced in log space
                let dlp = (self.log_probability(u[3 * k + 2]) - self.log_probability(u[3 * k])) / (2.0 * step_size(x));
                Some(dlp * x)
            })
            .collect()
    }
}

/// Elasticity of the probability of alternative `alt` with respect to its
/// own attribute, evaluated with the attribute set to `x` (raw units) and
/// everything else held fixed. `None` when the probability is below
/// [`MIN_PROBABILITY`].
pub fn point_elasticity(
    model: &dyn UtilityModel,
    obs: &ChoiceObservation,
    alt: usize,
    attribute: Attribute,
    x: f64,
    transform: &TransformSpec,
) -> Result<Option<f64>> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::data(format!("attribute value {x} outside its domain")));
    }
    let probe = Probe::new(model, obs, alt, transform)?;
    Ok(probe.elasticities(model, attribute, &[x], transform)[0])
}

/// One observation per OD pair where the chosen route is not the fastest,
/// then a seeded sample of at most `n_od` of those pairs. Returned indices
/// are in sampled order.
pub fn sample_observations(observations: &[ChoiceObservation], n_od: usize, seed: u64) -> Vec<usize> {
    let mut first: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for (i, o) in observations.iter().enumerate() {
        if o.chosen != o.fastest() {
            first.entry(o.od_pair).or_insert(i);
        }
    }
    let mut picked: Vec<usize> = first.into_values().collect();
    picked.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    picked.truncate(n_od);
    picked
}

/// `points` evenly spaced values covering `[lo, hi]`; a single point when
/// the range is degenerate.
pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || hi <= lo {
        return vec![lo];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityStudy {
    pub curves: Vec<ElasticityCurve>,
    /// Observation indices used, one per OD pair.
    pub sampled: Vec<usize>,
}

/// Mean and spread of chosen-route point elasticities over sampled OD pairs,
/// per model and attribute, along a grid spanning each attribute's observed
/// range in the sample.
pub fn elasticity_study(
    models: &[(&str, &dyn UtilityModel)],
    observations: &[ChoiceObservation],
    transform: &TransformSpec,
    opts: &ElasticityOptions,
) -> Result<ElasticityStudy> {
    let sampled = sample_observations(observations, opts.n_od, opts.seed);
    if sampled.is_empty() {
        return Err(Error::data("no OD pair where the chosen route is not the fastest"));
    }
    let grids: Vec<Vec<f64>> = Attribute::ALL
        .iter()
        .map(|a| {
            let values = sampled
                .iter()
                .flat_map(|&i| observations[i].alternatives.iter().map(|r| raw_attributes(r)[a.column()]));
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            grid(lo, hi, opts.grid_points)
        })
        .collect();
    let mut curves = Vec::new();
    for (id, model) in models {
        // [sample][attribute][grid point]
        let per_obs: Vec<Vec<Vec<Option<f64>>>> = sampled
            .par_iter()
            .map(|&i| {
                let o = &observations[i];
                let probe = Probe::new(*model, o, o.chosen, transform)?;
                Ok(Attribute::ALL
                    .iter()
                    .zip(&grids)
                    .map(|(a, g)| probe.elasticities(*model, *a, g, transform))
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (ai, a) in Attribute::ALL.iter().enumerate() {
            let g = &grids[ai];
            let mut mean = Vec::with_capacity(g.len());
            let mut std = Vec::with_capacity(g.len());
            let mut n_points = Vec::with_capacity(g.len());
            for k in 0..g.len() {
                let vals: Vec<f64> = per_obs.iter().filter_map(|e| e[ai][k]).collect();
                let ms = MeanStd::of(&vals);
                mean.push(ms.mean);
                std.push(ms.std);
                n_points.push(vals.len());
            }
            curves.push(ElasticityCurve {
                attribute: *a,
                grid: g.clone(),
                mean_elasticity: mean,
                std_band: std,
                n_points,
                model_id: id.to_string(),
            });
        }
    }
    Ok(ElasticityStudy { curves, sampled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DcmFit, DcmSpec};
    use crate::types::test_support::route;
    use crate::types::CardType;

    fn mnl() -> DcmFit {
        DcmFit::from_coefficients(DcmSpec::mnl(), &[-2.483, -1.0, -2.9, -3.5]).unwrap()
    }

    fn obs(routes: Vec<crate::types::Route>, chosen: usize) -> ChoiceObservation {
        ChoiceObservation {
            od_pair: (NodeId(0), NodeId(1)),
            alternatives: routes,
            chosen,
            card_type: CardType::Adult,
        }
    }

    #[test]
    fn mnl_elasticity_is_beta_times_one_minus_p() {
        let t = TransformSpec::default();
        let m = mnl();
        let o = obs(vec![route(1200, 150, 60, 1, &[1]), route(900, 200, 300, 1, &[2]), route(1500, 120, 0, 0, &[3])], 0);
        for (attr, x) in [(Attribute::Ivtt, 1200.0), (Attribute::Ivtt, 2400.0), (Attribute::Fare, 150.0), (Attribute::Walk, 90.0)] {
            let e = point_elasticity(&m, &o, 0, attr, x, &t).unwrap().unwrap();
            // closed form at the perturbed point
            let mut raw = raw_attributes(&o.alternatives[0]);
            raw[attr.column()] = x;
            let xr = t.transform_raw(raw);
            let b = m.policy_betas();
            let v0: f64 = (0..4).map(|k| b[k] * xr[k]).sum();
            let others: Vec<f64> = o.alternatives[1..]
                .iter()
                .map(|r| {
                    let z = t.transform_raw(raw_attributes(r));
                    (0..4).map(|k| b[k] * z[k]).sum()
                })
                .collect();
            let p = v0.exp() / (v0.exp() + others.iter().map(|v| v.exp()).sum::<f64>());
            // d ln(x + c)/dx · x = x / (x + c) for walk; 1 for the pure logs
            let scale = match attr {
                Attribute::Walk => x / (x + t.walk_offset_seconds),
                _ => 1.0,
            };
            let expected = b[attr.column()] * (1.0 - p) * scale;
            assert!(((e - expected) / expected).abs() < 1e-6, "{attr:?} {e} vs {expected}");
        }
    }

    #[test]
    fn flat_below_floor_and_single_alternative() {
        let t = TransformSpec::default();
        let o = obs(vec![route(60, 150, 60, 1, &[1]), route(900, 200, 300, 1, &[2])], 0);
        assert_eq!(point_elasticity(&mnl(), &o, 0, Attribute::Ivtt, 60.0, &t).unwrap(), Some(0.0));
        let single = obs(vec![route(600, 150, 60, 1, &[1])], 0);
        assert_eq!(point_elasticity(&mnl(), &single, 0, Attribute::Ivtt, 600.0, &t).unwrap(), Some(0.0));
    }

    #[test]
    fn negligible_probability_is_missing() {
        let t = TransformSpec::default();
        let m = DcmFit::from_coefficients(DcmSpec::mnl(), &[-200.0, -1.0, 0.0, 0.0]).unwrap();
        let o = obs(vec![route(3600, 150, 60, 1, &[1]), route(300, 200, 300, 1, &[2])], 0);
        assert_eq!(point_elasticity(&m, &o, 0, Attribute::Ivtt, 3600.0, &t).unwrap(), None);
    }

    #[test]
    fn study_is_deterministic_and_skips_fastest_choices() {
        let t = TransformSpec::default();
        let mut all = Vec::new();
        for k in 0..30u32 {
            let mut o = obs(
                vec![route(600 + 30 * k, 150, 60, 1, &[1]), route(900, 200, 300 + k, 1, &[2]), route(1500, 120, 0, 0, &[3])],
                (k % 3) as usize,
            );
            o.od_pair = (NodeId(k % 10), NodeId(100));
            all.push(o);
        }
        let m = mnl();
        let models: [(&str, &dyn UtilityModel); 1] = [("MNL", &m)];
        let opts = ElasticityOptions {
            n_od: 5,
            grid_points: 7,
            seed: 4,
        };
        let a = elasticity_study(&models, &all, &t, &opts).unwrap();
        let b = elasticity_study(&models, &all, &t, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sampled.len(), 5);
        for &i in &a.sampled {
            assert_ne!(all[i].chosen, all[i].fastest());
        }
        assert_eq!(a.curves.len(), 4);
        for c in &a.curves {
            assert!(c.grid.windows(2).all(|w| w[0] < w[1]));
            assert!(c.std_band.iter().all(|s| *s >= 0.0));
        }
    }

    #[test]
    fn grid_endpoints() {
        let g = grid(60.0, 3600.0, 25);
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 60.0);
        assert_eq!(g[24], 3600.0);
        assert_eq!(grid(5.0, 5.0, 25), vec![5.0]);
    }
}
