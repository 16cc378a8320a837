//! Domain types shared by every stage of the pipeline.
//!
//! Raw route attributes are kept in integer units (seconds, cents). Conversion
//! into model units happens once, in [`crate::features`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on choice-set size: six categories, five routes each.
pub const MAX_ALTERNATIVES: usize = 30;
pub const ROUTES_PER_CATEGORY: usize = 5;
pub const LANDUSE_DIM: usize = 30;
/// IVTT, Fare, WT, NoT.
pub const POLICY_DIM: usize = 4;
pub const POLICY_NAMES: [&str; POLICY_DIM] = ["IVTT", "Fare", "WT", "NoT"];
pub const CARD_DIM: usize = 3;

pub type Landuse = [f64; LANDUSE_DIM];

/// Zoning categories of a land-use vector, in storage order.
pub const LANDUSE_NAMES: [&str; LANDUSE_DIM] = [
    "Utility",
    "OpenSpace",
    "PlaceOfWorship",
    "PortAirport",
    "Business2",
    "Sports",
    "Recreation",
    "Waterbody",
    "Agriculture",
    "SpecialUse",
    "Commercial",
    "Residential",
    "TransportFacilities",
    "CommercialResidential",
    "CivicCommunity",
    "HealthMedical",
    "ResidentialCommercial1st",
    "Park",
    "MassRapidTransit",
    "Business1",
    "BeachArea",
    "LightRapidTransit",
    "Cemetery",
    "BusinessPark",
    "White",
    "Hotel",
    "Business2White",
    "Business1White",
    "ResidentialInstitution",
    "BusinessParkWhite",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteCategory {
    Bus,
    BusBus,
    Rail,
    BusRail,
    RailBus,
    BusRailBus,
}

impl RouteCategory {
    pub const ALL: [RouteCategory; 6] = [
        RouteCategory::Bus,
        RouteCategory::BusBus,
        RouteCategory::Rail,
        RouteCategory::BusRail,
        RouteCategory::RailBus,
        RouteCategory::BusRailBus,
    ];

    /// Fewest transfers a route of this category can have.
    pub fn min_transfers(self) -> u32 {
        match self {
            RouteCategory::Bus | RouteCategory::Rail => 0,
            RouteCategory::BusBus | RouteCategory::BusRail | RouteCategory::RailBus => 1,
            RouteCategory::BusRailBus => 2,
        }
    }

    /// Whether `n` transfers can occur in a route of this category. Single bus
    /// routes never transfer; rail-only journeys may change lines.
    pub fn admits_transfers(self, n: u32) -> bool {
        match self {
            RouteCategory::Bus => n == 0,
            other => n >= other.min_transfers(),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CardType {
    Student,
    Adult,
    Senior,
}

impl CardType {
    pub const ALL: [CardType; 3] = [CardType::Student, CardType::Adult, CardType::Senior];

    pub fn one_hot(self) -> [f64; CARD_DIM] {
        let mut v = [0.0; CARD_DIM];
        v[self as usize] = 1.0;
        v
    }
}

/// One alternative in a choice set, with raw (untransformed) attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub ivtt_seconds: u32,
    pub fare_cents: u32,
    pub walk_transfer_seconds: u32,
    pub num_transfers: u32,
    pub links: Vec<LinkId>,
    /// Travel cost of each link in seconds, aligned with `links`.
    pub link_costs: Vec<f64>,
    pub category: RouteCategory,
    #[serde(with = "landuse_serde")]
    pub origin_landuse: Landuse,
    #[serde(with = "landuse_serde")]
    pub dest_landuse: Landuse,
    #[serde(with = "landuse_serde")]
    pub transfer_landuse: Landuse,
    /// Stops where the route changes vehicle, in travel order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transfer_stops: Vec<NodeId>,
}

pub(crate) mod landuse_serde {
    use super::{Landuse, LANDUSE_DIM};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Landuse, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Landuse, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.len() != LANDUSE_DIM {
            return Err(D::Error::custom(format!(
                "land-use vector has {} entries, expected {LANDUSE_DIM}",
                v.len()
            )));
        }
        let mut out = [0.0; LANDUSE_DIM];
        out.copy_from_slice(&v);
        Ok(out)
    }
}

/// JSON has no NaN: missing statistics are written as `null` and read back
/// as NaN.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                None => s.serialize_none(),
                Some(v) => {
                    let mut seq = s.serialize_seq(Some(v.len()))?;
                    for x in v {
                        seq.serialize_element(&(!x.is_nan()).then_some(*x))?;
                    }
                    seq.end()
                }
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
            let v = Option::<Vec<Option<f64>>>::deserialize(d)?;
            Ok(v.map(|v| v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()))
        }
    }
}

fn check_landuse(what: &str, v: &Landuse) -> Result<()> {
    if v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::structural(format!("{what} land-use entry outside [0,1]")));
    }
    let total: f64 = v.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::structural(format!("{what} land-use sums to {total} > 1")));
    }
    Ok(())
}

impl Route {
    pub fn validate(&self) -> Result<()> {
        check_landuse("origin", &self.origin_landuse)?;
        check_landuse("destination", &self.dest_landuse)?;
        check_landuse("transfer", &self.transfer_landuse)?;
        if !self.category.admits_transfers(self.num_transfers) {
            return Err(Error::structural(format!(
                "{} transfers inconsistent with category {:?}",
                self.num_transfers, self.category
            )));
        }
        if self.links.len() != self.link_costs.len() {
            return Err(Error::structural(format!(
                "route has {} links but {} link costs",
                self.links.len(),
                self.link_costs.len()
            )));
        }
        Ok(())
    }

    /// Journey time used for ranking alternatives: IVTT plus transfer walking.
    pub fn journey_seconds(&self) -> u32 {
        self.ivtt_seconds + self.walk_transfer_seconds
    }

    /// Total route cost `c_r` for path-size computation.
    pub fn total_cost(&self) -> f64 {
        self.link_costs.iter().sum()
    }
}

/// One observed journey: the choice set and the route taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceObservation {
    pub od_pair: (NodeId, NodeId),
    pub alternatives: Vec<Route>,
    pub chosen: usize,
    pub card_type: CardType,
}

impl ChoiceObservation {
    pub fn validate(&self) -> Result<()> {
        let n = self.alternatives.len();
        if n == 0 || n > MAX_ALTERNATIVES {
            return Err(Error::structural(format!(
                "OD {:?} has {n} alternatives (allowed 1..={MAX_ALTERNATIVES})",
                self.od_pair
            )));
        }
        if self.chosen >= n {
            return Err(Error::structural(format!(
                "OD {:?}: chosen index {} out of {n} alternatives",
                self.od_pair, self.chosen
            )));
        }
        let mut per_category = [0usize; 6];
        for r in &self.alternatives {
            r.validate()?;
            per_category[r.category.index()] += 1;
        }
        if let Some(c) = per_category.iter().position(|&c| c > ROUTES_PER_CATEGORY) {
            return Err(Error::structural(format!(
                "OD {:?}: {} routes in category {:?} (max {ROUTES_PER_CATEGORY})",
                self.od_pair,
                per_category[c],
                RouteCategory::ALL[c]
            )));
        }
        Ok(())
    }

    /// Index of the alternative with the smallest journey time (first on ties).
    pub fn fastest(&self) -> usize {
        let mut best = 0;
        for (i, r) in self.alternatives.iter().enumerate() {
            if r.journey_seconds() < self.alternatives[best].journey_seconds() {
                best = i;
            }
        }
        best
    }
}

/// Per-observation model input, padded to [`MAX_ALTERNATIVES`] rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    /// `true` for real alternatives; padded rows are all-zero.
    pub mask: Vec<bool>,
    pub chosen: usize,
    /// Number of leading policy columns.
    pub policy_dim: usize,
}

impl FeatureMatrix {
    pub fn feature_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_alternatives(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Rows of the real alternatives, in order.
    pub fn active_rows(&self) -> impl Iterator<Item = (usize, ndarray::ArrayView1<'_, f64>)> {
        self.values
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| self.mask[*i])
    }
}

/// Pad a per-alternative feature matrix to the fixed alternative count and
/// build its mask.
pub fn pad_and_mask(
    obs: &ChoiceObservation,
    features: &Array2<f64>,
    policy_dim: usize,
) -> Result<FeatureMatrix> {
    let n = obs.alternatives.len();
    if n > MAX_ALTERNATIVES {
        return Err(Error::structural(format!(
            "OD {:?} has {n} alternatives, more than {MAX_ALTERNATIVES}",
            obs.od_pair
        )));
    }
    if features.nrows() != n {
        return Err(Error::structural(format!(
            "OD {:?}: {} feature rows for {n} alternatives",
            obs.od_pair,
            features.nrows()
        )));
    }
    if obs.chosen >= n {
        return Err(Error::structural(format!(
            "OD {:?}: chosen index {} out of range",
            obs.od_pair, obs.chosen
        )));
    }
    let mut values = Array2::zeros((MAX_ALTERNATIVES, features.ncols()));
    values
        .slice_mut(ndarray::s![..n, ..])
        .assign(features);
    let mask = (0..MAX_ALTERNATIVES).map(|i| i < n).collect();
    Ok(FeatureMatrix {
        values,
        mask,
        chosen: obs.chosen,
        policy_dim,
    })
}

/// Named coefficient table with optional inference columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTable {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    #[serde(default, with = "nan_as_null::vec")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(default, with = "nan_as_null::vec")]
    pub t_stats: Option<Vec<f64>>,
    pub frozen: Vec<bool>,
}

impl ParameterTable {
    pub fn new(names: Vec<String>, estimates: Vec<f64>, frozen: Vec<bool>) -> Result<Self> {
        if names.len() != estimates.len() || names.len() != frozen.len() {
            return Err(Error::structural("parameter table columns differ in length"));
        }
        Ok(ParameterTable {
            names,
            estimates,
            std_errors: None,
            t_stats: None,
            frozen,
        })
    }

    /// Attach standard errors and derive t-statistics. Entries with a zero or
    /// missing standard error get a NaN t-statistic.
    pub fn with_std_errors(mut self, std_errors: Vec<f64>) -> Result<Self> {
        if std_errors.len() != self.estimates.len() {
            return Err(Error::structural("std error vector length mismatch"));
        }
        let t = self
            .estimates
            .iter()
            .zip(&std_errors)
            .map(|(&b, &se)| if se > 0.0 { b / se } else { f64::NAN })
            .collect();
        self.std_errors = Some(std_errors);
        self.t_stats = Some(t);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.estimates[i])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        let ok = self.estimates.len() == n
            && self.frozen.len() == n
            && self.std_errors.as_ref().is_none_or(|v| v.len() == n)
            && self.t_stats.as_ref().is_none_or(|v| v.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::structural("parameter table columns differ in length"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub train_loss: f64,
    pub valid_loss: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and sample standard deviation (n - 1 denominator; zero
    /// for a single value).
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub train_loss: MeanStd,
    pub valid_loss: MeanStd,
    pub train_acc: MeanStd,
    pub valid_acc: MeanStd,
}

impl FoldSummary {
    pub fn from_folds(folds: &[FoldMetrics]) -> FoldSummary {
        let col = |f: fn(&FoldMetrics) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
        FoldSummary {
            train_loss: col(|m| m.train_loss),
            valid_loss: col(|m| m.valid_loss),
            train_acc: col(|m| m.train_acc),
            valid_acc: col(|m| m.valid_acc),
        }
    }
}

/// Cross-validated evaluation of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    /// Parameter count in the utility function, fixed entries included.
    pub parameter_count: usize,
    pub per_fold: Vec<FoldMetrics>,
    pub summary: FoldSummary,
    /// Estimates are fold means; `std_errors` holds the across-fold spread.
    pub parameter_table: ParameterTable,
}

impl EvalReport {
    pub fn new(
        model_id: impl Into<String>,
        parameter_count: usize,
        per_fold: Vec<FoldMetrics>,
        parameter_table: ParameterTable,
    ) -> Self {
        let summary = FoldSummary::from_folds(&per_fold);
        EvalReport {
            model_id: model_id.into(),
            parameter_count,
            per_fold,
            summary,
            parameter_table,
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn route(ivtt: u32, fare: u32, walk: u32, transfers: u32, links: &[u32]) -> Route {
        let category = match transfers {
            0 => RouteCategory::Bus,
            1 => RouteCategory::BusBus,
            _ => RouteCategory::BusRailBus,
        };
        Route {
            ivtt_seconds: ivtt,
            fare_cents: fare,
            walk_transfer_seconds: walk,
            num_transfers: transfers,
            links: links.iter().map(|&l| LinkId(l)).collect(),
            link_costs: vec![1.0; links.len()],
            category,
            origin_landuse: [0.0; LANDUSE_DIM],
            dest_landuse: [0.0; LANDUSE_DIM],
            transfer_landuse: [0.0; LANDUSE_DIM],
            transfer_stops: Vec::new(),
        }
    }

    pub fn observation(n: usize) -> ChoiceObservation {
        let alternatives = (0..n)
            .map(|i| route(600 + 60 * i as u32, 120, 0, 0, &[i as u32]))
            .collect();
        ChoiceObservation {
            od_pair: (NodeId(1), NodeId(2)),
            alternatives,
            chosen: 0,
            card_type: CardType::Adult,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    fn features(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 4), |(i, j)| (i * 4 + j + 1) as f64)
    }

    #[test]
    fn pad_three_alternatives() {
        let obs = observation(3);
        let fm = pad_and_mask(&obs, &features(3), 4).unwrap();
        assert_eq!(fm.mask.iter().filter(|&&m| m).count(), 3);
        assert_eq!(fm.mask.iter().filter(|&&m| !m).count(), 27);
        assert_eq!(fm.values.nrows(), MAX_ALTERNATIVES);
        assert!(fm.values.slice(ndarray::s![3.., ..]).iter().all(|&v| v == 0.0));
        assert_eq!(fm.values[[2, 3]], 12.0);
    }

    #[test]
    fn pad_full_choice_set() {
        let obs = observation(30);
        let fm = pad_and_mask(&obs, &features(30), 4).unwrap();
        assert!(fm.mask.iter().all(|&m| m));
    }

    #[test]
    fn pad_rejects_oversized_set() {
        let obs = observation(31);
        let err = pad_and_mask(&obs, &features(31), 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("NodeId(1)"), "{msg}");
    }

    #[test]
    fn pad_preserves_chosen() {
        let mut obs = observation(5);
        obs.chosen = 4;
        let fm = pad_and_mask(&obs, &features(5), 4).unwrap();
        assert_eq!(fm.chosen, 4);
    }

    #[test]
    fn route_invariants() {
        let mut r = route(600, 92, 0, 0, &[1, 2]);
        r.validate().unwrap();
        r.num_transfers = 1;
        assert!(r.validate().is_err());
        r.num_transfers = 0;
        r.link_costs.pop();
        assert!(r.validate().is_err());
        let mut r = route(600, 92, 0, 0, &[1]);
        r.origin_landuse[0] = 0.7;
        r.origin_landuse[1] = 0.4;
        assert!(r.validate().is_err());
    }

    #[test]
    fn category_limit_enforced() {
        let mut obs = observation(6);
        assert!(obs.validate().is_err());
        obs.alternatives.pop();
        obs.validate().unwrap();
    }

    #[test]
    fn t_stats_follow_estimates() {
        let t = ParameterTable::new(
            vec!["a".into(), "b".into()],
            vec![-2.0, 1.0],
            vec![false, true],
        )
        .unwrap()
        .with_std_errors(vec![0.5, 0.0])
        .unwrap();
        let ts = t.t_stats.as_ref().unwrap();
        assert_eq!(ts[0], -4.0);
        assert!(ts[1].is_nan());
        t.validate().unwrap();
    }

    #[test]
    fn fold_summary_means() {
        let folds: Vec<FoldMetrics> = (0..5)
            .map(|i| FoldMetrics {
                train_loss: 0.1 * i as f64,
                valid_loss: 1.0,
                train_acc: 0.5,
                valid_acc: 0.2 * i as f64,
            })
            .collect();
        let s = FoldSummary::from_folds(&folds);
        assert!((s.train_loss.mean - 0.2).abs() < 1e-12);
        assert!((s.valid_acc.mean - 0.4).abs() < 1e-12);
        assert_eq!(s.valid_loss.std, 0.0);
    }
}
