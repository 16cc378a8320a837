//! Maximum-likelihood MNL and path-size logit in willingness-to-pay space
//! (fare coefficient fixed).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::ChoiceData;
use super::pathsize::PathSizeCache;
use crate::error::{Error, Result};
use crate::types::{FeatureMatrix, ParameterTable, POLICY_DIM, POLICY_NAMES};

/// Index of the fare column among the policy features.
pub const FARE: usize = 1;
pub const PATH_SIZE_NAME: &str = "PathSize";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DcmKind {
    #[serde(rename = "MNL")]
    Mnl,
    #[serde(rename = "PSL")]
    Psl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcmSpec {
    pub kind: DcmKind,
    #[serde(default = "default_fare")]
    pub fare_coefficient_fixed: f64,
}

fn default_fare() -> f64 {
    -1.0
}

impl DcmSpec {
    pub fn mnl() -> Self {
        DcmSpec {
            kind: DcmKind::Mnl,
            fare_coefficient_fixed: -1.0,
        }
    }

    pub fn psl() -> Self {
        DcmSpec {
            kind: DcmKind::Psl,
            fare_coefficient_fixed: -1.0,
        }
    }

    /// Estimated (free) parameters: the non-fare policy betas, plus the
    /// path-size coefficient for PSL.
    pub fn n_free(&self) -> usize {
        POLICY_DIM - 1 + (self.kind == DcmKind::Psl) as usize
    }

    /// Full coefficient vector (policy betas then optional path-size beta).
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_free() + 1);
        let mut it = free.iter().copied();
        for k in 0..POLICY_DIM {
            if k == FARE {
                out.push(self.fare_coefficient_fixed);
            } else {
                out.push(it.next().expect("free vector too short"));
            }
        }
        out.extend(it);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = POLICY_NAMES.iter().map(|s| s.to_string()).collect();
        if self.kind == DcmKind::Psl {
            names.push(PATH_SIZE_NAME.into());
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcmOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Relative step of the central-difference Hessian.
    pub hessian_step: f64,
}

impl Default for DcmOptions {
    fn default() -> Self {
        DcmOptions {
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            hessian_step: 1e-5,
        }
    }
}

/// Compact, unpadded estimation data: active alternatives only.
#[derive(Debug, Clone, PartialEq)]
pub struct DcmData {
    x: Vec<[f64; POLICY_DIM]>,
    ln_ps: Vec<f64>,
    /// `offsets[n]..offsets[n + 1]` are the rows of observation `n`.
    offsets: Vec<usize>,
    chosen: Vec<usize>,
}

impl DcmData {
    pub fn from_feature_matrices(data: &[FeatureMatrix], path_size: Option<&[PathSizeCache]>) -> Result<Self> {
        if let Some(ps) = path_size {
            if ps.len() != data.len() {
                return Err(Error::structural("one path-size cache per observation is required"));
            }
        }
        let mut out = DcmData {
            x: Vec::new(),
            ln_ps: Vec::new(),
            offsets: vec![0],
            chosen: Vec::with_capacity(data.len()),
        };
        for (n, fm) in data.iter().enumerate() {
            if fm.policy_dim != POLICY_DIM || fm.feature_dim() < POLICY_DIM {
                return Err(Error::structural("DCM estimation needs the four policy columns"));
            }
            if !fm.mask.get(fm.chosen).copied().unwrap_or(false) {
                return Err(Error::structural(format!("observation {n}: chosen alternative is masked")));
            }
            let mut chosen_row = 0;
            for (k, (i, row)) in fm.active_rows().enumerate() {
                if i == fm.chosen {
                    chosen_row = k;
                }
                let mut x = [0.0; POLICY_DIM];
                for (c, v) in x.iter_mut().enumerate() {
                    *v = row[c];
                }
                out.x.push(x);
                let ln = match path_size {
                    Some(ps) => *ps[n].ln_ps.get(i).ok_or_else(|| {
                        Error::structural(format!("observation {n}: path-size cache too short"))
                    })?,
                    None => 0.0,
                };
                out.ln_ps.push(ln);
            }
            out.chosen.push(chosen_row);
            out.offsets.push(out.x.len());
        }
        Ok(out)
    }

    /// Rows of the listed observations from deduplicated choice data. The
    /// first four columns are the policy features; `ln PS` is taken from the
    /// data when present.
    pub fn from_choice_data(data: &ChoiceData, observations: &[usize]) -> Result<Self> {
        if data.feature_dim() < POLICY_DIM {
            return Err(Error::structural("DCM estimation needs the four policy columns"));
        }
        let x = data.rows();
        let mut out = DcmData {
            x: Vec::new(),
            ln_ps: Vec::new(),
            offsets: vec![0],
            chosen: Vec::with_capacity(observations.len()),
        };
        for &n in observations {
            let (set, chosen) = data.observation(n);
            for r in data.set_range(set) {
                let mut row = [0.0; POLICY_DIM];
                for (c, v) in row.iter_mut().enumerate() {
                    *v = x[(r, c)];
                }
                out.x.push(row);
                out.ln_ps.push(data.ln_ps().map_or(0.0, |p| p[r]));
            }
            out.chosen.push(chosen);
            out.offsets.push(out.x.len());
        }
        Ok(out)
    }

    pub fn n_observations(&self) -> usize {
        self.chosen.len()
    }

    /// Log-likelihood of the uniform model over each choice set.
    pub fn null_log_likelihood(&self) -> f64 {
        self.offsets.windows(2).map(|w| -((w[1] - w[0]) as f64).ln()).sum()
    }
}

const CHUNK: usize = 2048;

/// Log-likelihood and gradient with respect to the full coefficient vector
/// (policy betas, then path-size beta). Chunks are reduced in a fixed order
/// so the result does not depend on thread scheduling.
fn ll_grad_full(data: &DcmData, beta: &[f64]) -> (f64, Vec<f64>) {
    let dim = beta.len();
    let n = data.n_observations();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let mut ll = 0.0;
            let mut g = vec![0.0; dim];
            let mut u = Vec::new();
            for obs in s..(s + CHUNK).min(n) {
                let rows = data.offsets[obs]..data.offsets[obs + 1];
                u.clear();
                for r in rows.clone() {
                    let x = &data.x[r];
                    let mut v: f64 = (0..POLICY_DIM).map(|k| beta[k] * x[k]).sum();
                    if dim > POLICY_DIM {
                        v += beta[POLICY_DIM] * data.ln_ps[r];
                    }
                    u.push(v);
                }
                let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = u.iter().map(|v| (v - m).exp()).sum();
                let lse = m + z.ln();
                let c = rows.start + data.chosen[obs];
                ll += u[data.chosen[obs]] - lse;
                // gradient: x_chosen - sum_r p_r x_r
                for (k, gk) in g.iter_mut().enumerate().take(POLICY_DIM) {
                    *gk += data.x[c][k];
                }
                if dim > POLICY_DIM {
                    g[POLICY_DIM] += data.ln_ps[c];
                }
                for (j, r) in rows.enumerate() {
                    let p = (u[j] - lse).exp();
                    for (k, gk) in g.iter_mut().enumerate().take(POLICY_DIM) {
                        *gk -= p * data.x[r][k];
                    }
                    if dim > POLICY_DIM {
                        g[POLICY_DIM] -= p * data.ln_ps[r];
                    }
                }
            }
            (ll, g)
        })
        .collect();
    let mut ll = 0.0;
    let mut g = vec![0.0; dim];
    for (l, gp) in parts {
        ll += l;
        for (a, b) in g.iter_mut().zip(gp) {
            *a += b;
        }
    }
    (ll, g)
}

fn free_indices(spec: &DcmSpec) -> Vec<usize> {
    (0..POLICY_DIM + (spec.kind == DcmKind::Psl) as usize)
        .filter(|&k| k != FARE)
        .collect()
}

/// Log-likelihood at the given free parameters.
pub fn log_likelihood(spec: &DcmSpec, data: &DcmData, free: &[f64]) -> f64 {
    ll_grad_full(data, &spec.expand(free)).0
}

/// Log-likelihood and its gradient with respect to the free parameters.
pub fn log_likelihood_and_gradient(spec: &DcmSpec, data: &DcmData, free: &[f64]) -> (f64, Vec<f64>) {
    let (ll, g) = ll_grad_full(data, &spec.expand(free));
    (ll, free_indices(spec).into_iter().map(|k| g[k]).collect())
}

/// Central differences of the analytic gradient, symmetrised.
pub fn numerical_hessian(spec: &DcmSpec, data: &DcmData, free: &[f64], rel_step: f64) -> DMatrix<f64> {
    let k = free.len();
    let mut h = DMatrix::zeros(k, k);
    let mut probe = free.to_vec();
    for j in 0..k {
        let step = rel_step * free[j].abs().max(1.0);
        probe[j] = free[j] + step;
        let up = log_likelihood_and_gradient(spec, data, &probe).1;
        probe[j] = free[j] - step;
        let down = log_likelihood_and_gradient(spec, data, &probe).1;
        probe[j] = free[j];
        for i in 0..k {
            h[(i, j)] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// McFadden's adjusted rho-squared `1 - (LL - K) / LL0`.
pub fn rho_bar_squared(ll: f64, ll0: f64, k: usize) -> f64 {
    1.0 - (ll - k as f64) / ll0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcmFit {
    pub spec: DcmSpec,
    pub table: ParameterTable,
    #[serde(with = "crate::types::nan_as_null")]
    pub log_likelihood: f64,
    #[serde(with = "crate::types::nan_as_null")]
    pub null_log_likelihood: f64,
    #[serde(with = "crate::types::nan_as_null")]
    pub rho_bar_squared: f64,
    pub iterations: usize,
    #[serde(with = "crate::types::nan_as_null")]
    pub gradient_norm: f64,
    pub n_observations: usize,
}

impl DcmFit {
    /// A model with given coefficients (policy betas, then the path-size beta
    /// for PSL) and no estimation statistics.
    pub fn from_coefficients(spec: DcmSpec, coefficients: &[f64]) -> Result<Self> {
        let names = spec.names();
        if coefficients.len() != names.len() {
            return Err(Error::structural(format!(
                "{} coefficients given, {} expected",
                coefficients.len(),
                names.len()
            )));
        }
        let frozen = (0..names.len()).map(|k| k == FARE).collect();
        Ok(DcmFit {
            spec,
            table: ParameterTable::new(names, coefficients.to_vec(), frozen)?,
            log_likelihood: f64::NAN,
            null_log_likelihood: f64::NAN,
            rho_bar_squared: f64::NAN,
            iterations: 0,
            gradient_norm: f64::NAN,
            n_observations: 0,
        })
    }

    /// Policy coefficients in column order (fare included).
    pub fn policy_betas(&self) -> [f64; POLICY_DIM] {
        let mut b = [0.0; POLICY_DIM];
        b.copy_from_slice(&self.table.estimates[..POLICY_DIM]);
        b
    }
}

pub fn fit_dcm(spec: &DcmSpec, data: &[FeatureMatrix], path_size: Option<&[PathSizeCache]>) -> Result<DcmFit> {
    if spec.kind == DcmKind::Psl && path_size.is_none() {
        return Err(Error::structural("PSL estimation needs path-size caches"));
    }
    let data = DcmData::from_feature_matrices(data, path_size)?;
    fit_dcm_data(spec, &data, &DcmOptions::default())
}

/// Damped Newton ascent with a finite-difference Hessian; Levenberg
/// regularisation when the Hessian is not negative definite.
pub fn fit_dcm_data(spec: &DcmSpec, data: &DcmData, opts: &DcmOptions) -> Result<DcmFit> {
    if data.n_observations() == 0 {
        return Err(Error::data("no observations to estimate from"));
    }
    let k = spec.n_free();
    let mut beta = vec![0.0; k];
    let (mut ll, mut g) = log_likelihood_and_gradient(spec, data, &beta);
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut iterations = 0;
    while norm(&g) >= opts.gradient_tolerance {
        if iterations >= opts.max_iterations || !ll.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: norm(&g),
                last_iterate: spec.expand(&beta),
            });
        }
        iterations += 1;
        let neg_h = -numerical_hessian(spec, data, &beta, opts.hessian_step);
        let gv = DVector::from_vec(g.clone());
        let mut lambda = 0.0;
        let step = loop {
            let m = &neg_h + DMatrix::identity(k, k) * lambda;
            if let Some(ch) = m.cholesky() {
                break ch.solve(&gv);
            }
            lambda = if lambda == 0.0 { 1e-6 * neg_h.diagonal().abs().max().max(1.0) } else { lambda * 10.0 };
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let (ll_t, g_t) = log_likelihood_and_gradient(spec, data, &trial);
            if ll_t.is_finite() && ll_t >= ll - 1e-12 * ll.abs() {
                beta = trial;
                ll = ll_t;
                g = g_t;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: norm(&g),
                last_iterate: spec.expand(&beta),
            });
        }
    }

    let neg_h = -numerical_hessian(spec, data, &beta, opts.hessian_step);
    let cov = neg_h
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::numerical("information matrix is not positive definite"))?;
    let full = spec.expand(&beta);
    let mut se_full = vec![0.0; full.len()];
    for (j, &idx) in free_indices(spec).iter().enumerate() {
        se_full[idx] = cov[(j, j)].sqrt();
    }
    let frozen: Vec<bool> = (0..full.len()).map(|i| i == FARE).collect();
    let table = ParameterTable::new(spec.names(), full, frozen)?.with_std_errors(se_full)?;
    let ll0 = data.null_log_likelihood();
    Ok(DcmFit {
        spec: *spec,
        table,
        log_likelihood: ll,
        null_log_likelihood: ll0,
        rho_bar_squared: rho_bar_squared(ll, ll0, k),
        iterations,
        gradient_norm: norm(&g),
        n_observations: data.n_observations(),
    })
}
