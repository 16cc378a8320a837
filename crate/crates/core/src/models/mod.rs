//! Logit estimators and neural utility models.

use ndarray::ArrayView2;

pub mod data;
pub mod dcm;
pub mod deep;
pub mod pathsize;
pub mod train;

pub use data::{ChoiceData, Tally};
pub use dcm::{fit_dcm, DcmFit, DcmKind, DcmOptions, DcmSpec};
pub use deep::{DeepKind, DeepModel, DeepSpec, TransformerConfig};
pub use pathsize::{path_size, PathSizeCache};
pub use train::{evaluate, train, EpochRecord, FittedModel, Metrics, Schedule, Selection};

/// Anything that scores the alternatives of one choice set.
pub trait UtilityModel: Sync {
    /// Width of the unexpanded rows the model reads (4 or 97).
    fn feature_dim(&self) -> usize;

    /// Systematic utilities, evaluation mode. `ln_ps` carries the log path
    /// sizes of the set for models that use them.
    fn set_utilities(&self, rows: &ArrayView2<f64>, ln_ps: Option<&[f64]>) -> Vec<f64>;
}

impl UtilityModel for DcmFit {
    fn feature_dim(&self) -> usize {
        crate::types::POLICY_DIM
    }

    fn set_utilities(&self, rows: &ArrayView2<f64>, ln_ps: Option<&[f64]>) -> Vec<f64> {
        let b = &self.table.estimates;
        rows.rows()
            .into_iter()
            .enumerate()
            .map(|(r, x)| {
                let mut v: f64 = (0..crate::types::POLICY_DIM).map(|k| b[k] * x[k]).sum();
                if self.spec.kind == DcmKind::Psl {
                    v += b[crate::types::POLICY_DIM] * ln_ps.map_or(0.0, |p| p[r]);
                }
                v
            })
            .collect()
    }
}
