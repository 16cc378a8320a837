use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use super::enumerate::{enumerate_many, EnumerationRules};
use super::network::{generate_network, NetworkConfig, SyntheticNetwork};
use crate::error::{Error, Result};
use crate::features::{route_row, TransformSpec, CARD_START, CONTEXT_DIM, DEST_START, TRANSFER_START};
use crate::types::{CardType, ChoiceObservation, NodeId, Route, LANDUSE_NAMES, POLICY_DIM};

/// One `tanh` hidden unit over the 97-column context row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenUnit {
    /// Sparse weights as (column, weight).
    pub weights: Vec<(usize, f64)>,
    #[serde(default)]
    pub bias: f64,
    pub scale: f64,
}

/// Utility terms beyond the linear policy part, indexed by context column
/// (see [`crate::features`] for the layout).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LanduseUtility {
    pub linear: Vec<(usize, f64)>,
    /// Products of two context columns.
    pub pairwise: Vec<(usize, usize, f64)>,
    pub hidden: Vec<HiddenUnit>,
}

impl LanduseUtility {
    fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.linear
            .iter()
            .map(|t| t.0)
            .chain(self.pairwise.iter().flat_map(|t| [t.0, t.1]))
            .chain(self.hidden.iter().flat_map(|h| h.weights.iter().map(|w| w.0)))
    }

    pub fn value(&self, row: &[f64]) -> f64 {
        let mut v: f64 = self.linear.iter().map(|&(c, b)| b * row[c]).sum();
        v += self.pairwise.iter().map(|&(i, j, b)| b * row[i] * row[j]).sum::<f64>();
        for h in &self.hidden {
            let z: f64 = h.bias + h.weights.iter().map(|&(c, w)| w * row[c]).sum::<f64>();
            v += h.scale * z.tanh();
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthUtility {
    /// Coefficients on the log-transformed IVTT, Fare, WT, NoT.
    pub beta_linear: [f64; POLICY_DIM],
    /// Symmetric matrix `Q`; adds `x' Q x` over the policy features.
    #[serde(default)]
    pub beta_quadratic: Option<[[f64; POLICY_DIM]; POLICY_DIM]>,
    #[serde(default)]
    pub beta_landuse: Option<LanduseUtility>,
    pub gumbel_scale: f64,
    #[serde(default)]
    pub transform: TransformSpec,
}

impl Default for GroundTruthUtility {
    fn default() -> Self {
        GroundTruthUtility {
            beta_linear: [-2.5, -1.0, -3.0, -3.7],
            beta_quadratic: None,
            beta_landuse: None,
            gumbel_scale: 1.0,
            transform: TransformSpec::default(),
        }
    }
}

impl GroundTruthUtility {
    /// The MNL coefficients plus mild IVTT and walk-by-transfer curvature and
    /// land-use effects that differ between alternatives through their
    /// transfer stops: matches between transfer and destination zoning, a
    /// student preference for rail interchanges, and two saturating units.
    pub fn with_landuse_effects() -> Self {
        let lu = |name: &str| LANDUSE_NAMES.iter().position(|n| *n == name).expect("known category");
        let (com, res, mrt) = (lu("Commercial"), lu("Residential"), lu("MassRapidTransit"));
        let t = |k: usize| TRANSFER_START + k;
        let d = |k: usize| DEST_START + k;
        let student = CARD_START + CardType::Student as usize;
        let mut q = [[0.0; POLICY_DIM]; POLICY_DIM];
        q[0][0] = 0.4;
        q[2][3] = 0.3;
        q[3][2] = 0.3;
        GroundTruthUtility {
            beta_quadratic: Some(q),
            beta_landuse: Some(LanduseUtility {
                linear: Vec::new(),
                pairwise: vec![(t(com), d(com), 60.0), (t(mrt), student, 8.0), (t(res), d(res), -40.0)],
                hidden: vec![
                    HiddenUnit {
                        weights: vec![(t(mrt), 25.0), (t(com), 25.0)],
                        bias: -2.0,
                        scale: 2.0,
                    },
                    HiddenUnit {
                        weights: vec![(t(res), 30.0), (d(res), -30.0)],
                        bias: 0.0,
                        scale: 1.5,
                    },
                ],
            }),
            ..GroundTruthUtility::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gumbel_scale.is_finite() && self.gumbel_scale > 0.0) {
            return Err(Error::config("gumbel_scale must be positive"));
        }
        if let Some(q) = &self.beta_quadratic {
            for i in 0..POLICY_DIM {
                for j in 0..POLICY_DIM {
                    if q[i][j] != q[j][i] {
                        return Err(Error::config("beta_quadratic must be symmetric"));
                    }
                }
            }
        }
        if let Some(l) = &self.beta_landuse {
            if l.columns().any(|c| c >= CONTEXT_DIM) {
                return Err(Error::config(format!("land-use term column outside 0..{CONTEXT_DIM}")));
            }
        }
        self.transform.validate()
    }

    /// True when the generator is a plain MNL in the policy features.
    pub fn is_linear(&self) -> bool {
        self.beta_quadratic.is_none() && self.beta_landuse.is_none()
    }

    /// Systematic utility of a route for a traveller with `card`.
    pub fn utility(&self, route: &Route, card: CardType) -> f64 {
        let row = route_row(route, card, &self.transform, true);
        let x = &row[..POLICY_DIM];
        let mut v: f64 = self.beta_linear.iter().zip(x).map(|(b, x)| b * x).sum();
        if let Some(q) = &self.beta_quadratic {
            for i in 0..POLICY_DIM {
                for j in 0..POLICY_DIM {
                    v += q[i][j] * x[i] * x[j];
                }
            }
        }
        if let Some(l) = &self.beta_landuse {
            v += l.value(&row);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Sampling weights for Student, Adult, Senior cards.
    pub card_shares: [f64; 3],
    pub rules: EnumerationRules,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            card_shares: [0.2, 0.65, 0.15],
            rules: EnumerationRules::default(),
        }
    }
}

/// Draw one choice per entry of `sets` (an index into `choice_sets`).
pub fn simulate_from_sets(
    choice_sets: &[((NodeId, NodeId), Vec<Route>)],
    draws: &[usize],
    truth: &GroundTruthUtility,
    card_shares: [f64; 3],
    seed: u64,
) -> Result<Vec<ChoiceObservation>> {
    truth.validate()?;
    let cards = WeightedIndex::new(card_shares).map_err(|e| Error::config(format!("card_shares: {e}")))?;
    let gumbel = Gumbel::new(0.0, truth.gumbel_scale).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(draws.len());
    for &s in draws {
        let (od, routes) = choice_sets
            .get(s)
            .ok_or_else(|| Error::structural(format!("choice set index {s} out of range")))?;
        if routes.is_empty() {
            return Err(Error::data(format!("OD {od:?} has an empty choice set")));
        }
        let card = CardType::ALL[cards.sample(&mut rng)];
        let mut best = 0;
        let mut best_u = f64::NEG_INFINITY;
        for (i, r) in routes.iter().enumerate() {
            let u = truth.utility(r, card) + gumbel.sample(&mut rng);
            if u > best_u {
                best_u = u;
                best = i;
            }
        }
        out.push(ChoiceObservation {
            od_pair: *od,
            alternatives: routes.clone(),
            chosen: best,
            card_type: card,
        });
    }
    Ok(out)
}

/// Enumerate choice sets for `od_pairs` and simulate one journey per entry.
pub fn simulate_choices(
    net: &SyntheticNetwork,
    od_pairs: &[(NodeId, NodeId)],
    truth: &GroundTruthUtility,
    config: &SimulationConfig,
    seed: u64,
) -> Result<Vec<ChoiceObservation>> {
    let mut unique: Vec<(NodeId, NodeId)> = Vec::new();
    let mut slot: HashMap<(NodeId, NodeId), usize> = HashMap::new();
    let draws: Vec<usize> = od_pairs
        .iter()
        .map(|od| {
            *slot.entry(*od).or_insert_with(|| {
                unique.push(*od);
                unique.len() - 1
            })
        })
        .collect();
    let sets = enumerate_many(net, &unique, &config.rules);
    let sets: Vec<_> = unique.into_iter().zip(sets).collect();
    simulate_from_sets(&sets, &draws, truth, config.card_shares, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Distinct OD pairs with at least one feasible route.
    pub n_od: usize,
    pub n_observations: usize,
    pub simulation: SimulationConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_od: 120,
            n_observations: 50_000,
            simulation: SimulationConfig::default(),
        }
    }
}

/// Network, OD sample and journeys from one seed: the network uses `seed`,
/// the OD sample `seed + 1`, OD draws per journey `seed + 2` and the
/// simulated choices `seed + 3`.
pub fn generate_dataset(
    network: &NetworkConfig,
    config: &DatasetConfig,
    truth: &GroundTruthUtility,
    seed: u64,
) -> Result<(SyntheticNetwork, Vec<ChoiceObservation>)> {
    truth.validate()?;
    if config.n_od == 0 || config.n_observations == 0 {
        return Err(Error::config("n_od and n_observations must be positive"));
    }
    let net = generate_network(network, seed)?;
    let sets = sample_od_pairs(&net, config.n_od, &config.simulation.rules, seed.wrapping_add(1));
    if sets.is_empty() {
        return Err(Error::data("no OD pair of the network has a feasible route"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let draws: Vec<usize> = (0..config.n_observations).map(|_| rng.random_range(0..sets.len())).collect();
    let obs = simulate_from_sets(&sets, &draws, truth, config.simulation.card_shares, seed.wrapping_add(3))?;
    Ok((net, obs))
}

/// Sample up to `count` distinct OD pairs with non-empty choice sets, in
/// draw order, together with their choice sets.
pub fn sample_od_pairs(
    net: &SyntheticNetwork,
    count: usize,
    rules: &EnumerationRules,
    seed: u64,
) -> Vec<((NodeId, NodeId), Vec<Route>)> {
    let n = net.nodes.len() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<(NodeId, NodeId)> = (0..n)
        .flat_map(|o| (0..n).filter(move |&d| d != o).map(move |d| (NodeId(o), NodeId(d))))
        .collect();
    // partial Fisher-Yates in batches until enough non-empty sets are found
    let mut out = Vec::new();
    let mut next = 0;
    while out.len() < count && next < all.len() {
        let batch = (count - out.len()).max(16).min(all.len() - next);
        for k in next..next + batch {
            let j = rng.random_range(k..all.len());
            all.swap(k, j);
        }
        let ods = &all[next..next + batch];
        for (od, set) in ods.iter().zip(enumerate_many(net, ods, rules)) {
            if !set.is_empty() && out.len() < count {
                out.push((*od, set));
            }
        }
        next += batch;
    }
    out
}
