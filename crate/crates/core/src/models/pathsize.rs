use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LinkId, Route};

/// Path-size factor of every route in one choice set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSizeCache {
    pub ps: Vec<f64>,
    pub ln_ps: Vec<f64>,
}

/// `PS_r = sum over links l of r of (c_l / c_r) / (number of routes using l)`.
pub fn path_size(routes: &[Route]) -> Result<PathSizeCache> {
    let mut usage: HashMap<LinkId, usize> = HashMap::new();
    for r in routes {
        let mut seen: Vec<LinkId> = r.links.clone();
        seen.sort_unstable();
        seen.dedup();
        for l in seen {
            *usage.entry(l).or_default() += 1;
        }
    }
    let mut ps = Vec::with_capacity(routes.len());
    for (i, r) in routes.iter().enumerate() {
        if r.links.len() != r.link_costs.len() {
            return Err(Error::structural(format!("route {i}: links and link costs differ in length")));
        }
        if r.link_costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::structural(format!("route {i} has a negative or non-finite link cost")));
        }
        let total = r.total_cost();
        if total <= 0.0 {
            return Err(Error::structural(format!("route {i} has zero total cost")));
        }
        let v: f64 = r
            .links
            .iter()
            .zip(&r.link_costs)
            .map(|(l, c)| c / total / usage[l] as f64)
            .sum();
        ps.push(v);
    }
    let ln_ps = ps.iter().map(|p| p.ln()).collect();
    Ok(PathSizeCache { ps, ln_ps })
}
