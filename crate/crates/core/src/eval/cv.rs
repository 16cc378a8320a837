use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::FoldPlan;
use crate::engine::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{TransformSpec, CONTEXT_DIM};
use crate::models::data::{set_loss_and_hits, Tally};
use crate::models::dcm::{fit_dcm_data, DcmData, DcmOptions};
use crate::models::{
    train, ChoiceData, DcmFit, DcmKind, DcmSpec, DeepModel, DeepSpec, FittedModel, Metrics, Schedule,
    UtilityModel,
};
use crate::types::{ChoiceObservation, EvalReport, FoldMetrics, MeanStd, ParameterTable, POLICY_DIM};

/// Observations with their deduplicated feature matrices: the four policy
/// columns (with log path sizes) and the 97-column context rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<ChoiceObservation>,
    transform: TransformSpec,
    policy: ChoiceData,
    context: ChoiceData,
}

impl Dataset {
    pub fn new(observations: Vec<ChoiceObservation>, transform: TransformSpec) -> Result<Self> {
        transform.validate()?;
        let policy = ChoiceData::from_observations(&observations, &transform, false, true)?;
        let context = ChoiceData::from_observations(&observations, &transform, true, false)?;
        Ok(Dataset {
            observations,
            transform,
            policy,
            context,
        })
    }

    pub fn observations(&self) -> &[ChoiceObservation] {
        &self.observations
    }

    pub fn transform(&self) -> &TransformSpec {
        &self.transform
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    /// Choice data with the given feature width (4 or 97).
    pub fn choice_data(&self, feature_dim: usize) -> Result<&ChoiceData> {
        match feature_dim {
            POLICY_DIM => Ok(&self.policy),
            CONTEXT_DIM => Ok(&self.context),
            d => Err(Error::config(format!("feature_dim must be {POLICY_DIM} or {CONTEXT_DIM}, got {d}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Dcm {
        #[serde(flatten)]
        spec: DcmSpec,
    },
    Deep {
        spec: DeepSpec,
        schedule: Schedule,
        #[serde(default)]
        init_seed: u64,
    },
}

impl ModelSpec {
    pub fn feature_dim(&self) -> usize {
        match self {
            ModelSpec::Dcm { .. } => POLICY_DIM,
            ModelSpec::Deep { spec, .. } => spec.feature_dim,
        }
    }

    pub fn needs_policy_source(&self) -> bool {
        matches!(self, ModelSpec::Deep { spec, .. } if spec.kind.is_constrained())
    }
}

/// A model fitted on one set of observations.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Dcm(DcmFit),
    Deep(FittedModel),
}

impl Fitted {
    pub fn parameter_table(&self) -> ParameterTable {
        match self {
            Fitted::Dcm(f) => f.table.clone(),
            Fitted::Deep(f) => f.model.parameter_table(),
        }
    }

    /// Utility parameters, fixed entries included.
    pub fn parameter_count(&self) -> usize {
        match self {
            Fitted::Dcm(f) => f.table.len(),
            Fitted::Deep(f) => f.model.parameter_count(),
        }
    }

    pub fn utility_model(&self) -> &dyn UtilityModel {
        match self {
            Fitted::Dcm(f) => f,
            Fitted::Deep(f) => &f.model,
        }
    }

    pub fn checkpoint(&self) -> Option<Checkpoint> {
        match self {
            Fitted::Deep(f) => Some(f.model.to_checkpoint()),
            Fitted::Dcm(_) => None,
        }
    }

    pub fn deep(&self) -> Option<&DeepModel> {
        match self {
            Fitted::Deep(f) => Some(&f.model),
            Fitted::Dcm(_) => None,
        }
    }
}

/// Mean loss and (tie-fractional) accuracy of any utility model over the
/// observations in `tally`.
pub fn metrics(model: &dyn UtilityModel, data: &ChoiceData, tally: &Tally) -> Result<Metrics> {
    if model.feature_dim() > data.feature_dim() {
        return Err(Error::structural(format!(
            "model reads {} features, data has {}",
            model.feature_dim(),
            data.feature_dim()
        )));
    }
    if tally.n_obs == 0 {
        return Err(Error::data("cannot evaluate on zero observations"));
    }
    let width = model.feature_dim();
    let parts: Vec<(f64, f64)> = (0..tally.n_sets())
        .collect::<Vec<_>>()
        .par_chunks(256)
        .map(|ks| {
            let mut acc = (0.0, 0.0);
            for &k in ks {
                let s = tally.sets[k];
                let rows = data.set_rows(s);
                let rows = rows.slice(ndarray::s![.., ..width]);
                let ln_ps = data.ln_ps().map(|p| &p[data.set_range(s)]);
                let u = model.set_utilities(&rows, ln_ps);
                let (l, h) = set_loss_and_hits(&u, tally.set_counts(k));
                acc.0 += l;
                acc.1 += h;
            }
            acc
        })
        .collect();
    let (loss, hits) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let n = tally.n_obs as f64;
    Ok(Metrics {
        loss: loss / n,
        accuracy: hits / n,
    })
}

/// Train and held-out metrics of a model fitted without fold `f`.
pub fn fold_metrics(model: &dyn UtilityModel, data: &ChoiceData, plan: &FoldPlan, f: usize) -> Result<FoldMetrics> {
    let (train_obs, held) = plan.split(f);
    let tr = metrics(model, data, &data.tally(&train_obs))?;
    let va = metrics(model, data, &data.tally(&held))?;
    Ok(FoldMetrics {
        train_loss: tr.loss,
        valid_loss: va.loss,
        train_acc: tr.accuracy,
        valid_acc: va.accuracy,
    })
}

/// Report from per-fold metrics and parameter tables.
pub fn fold_report(
    model_id: &str,
    parameter_count: usize,
    per_fold: Vec<FoldMetrics>,
    tables: &[ParameterTable],
) -> Result<EvalReport> {
    Ok(EvalReport::new(model_id, parameter_count, per_fold, fold_mean_table(tables)?))
}

/// Fit a model on the listed observations. `valid` drives best-epoch
/// selection for deep models.
pub fn fit_model(
    spec: &ModelSpec,
    data: &Dataset,
    train_obs: &[usize],
    valid_obs: Option<&[usize]>,
    source: Option<&Checkpoint>,
) -> Result<Fitted> {
    let cd = data.choice_data(spec.feature_dim())?;
    match spec {
        ModelSpec::Dcm { spec } => {
            if spec.kind == DcmKind::Psl && cd.ln_ps().is_none() {
                return Err(Error::structural("PSL estimation needs path sizes"));
            }
            let dd = DcmData::from_choice_data(cd, train_obs)?;
            Ok(Fitted::Dcm(fit_dcm_data(spec, &dd, &DcmOptions::default())?))
        }
        ModelSpec::Deep {
            spec,
            schedule,
            init_seed,
        } => {
            let model = DeepModel::build(spec, source, *init_seed)?;
            let valid = valid_obs.map(|v| cd.tally(v));
            let fit = train(model, cd, &cd.tally(train_obs), valid.as_ref(), schedule)?;
            Ok(Fitted::Deep(fit))
        }
    }
}

/// Cross-validated fits of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRun {
    pub report: EvalReport,
    pub folds: Vec<Fitted>,
}

impl CvRun {
    /// Checkpoints of the per-fold models, for constrained successors.
    pub fn checkpoints(&self) -> Option<Vec<Checkpoint>> {
        self.folds.iter().map(Fitted::checkpoint).collect()
    }
}

/// Parameter estimates averaged over folds; the across-fold standard
/// deviation fills the standard-error column.
pub fn fold_mean_table(tables: &[ParameterTable]) -> Result<ParameterTable> {
    let first = tables.first().ok_or_else(|| Error::structural("no fold tables"))?;
    if tables.iter().any(|t| t.names != first.names) {
        return Err(Error::structural("fold parameter tables disagree on names"));
    }
    let (means, stds): (Vec<f64>, Vec<f64>) = (0..first.len())
        .map(|i| {
            let m = MeanStd::of(&tables.iter().map(|t| t.estimates[i]).collect::<Vec<_>>());
            (m.mean, m.std)
        })
        .unzip();
    ParameterTable::new(first.names.clone(), means, first.frozen.clone())?.with_std_errors(stds)
}

/// Train on k−1 folds and evaluate on the held-out fold, for every fold.
/// Constrained models take one CNN 1 checkpoint per fold in `sources`.
pub fn cross_validate(
    model_id: &str,
    spec: &ModelSpec,
    data: &Dataset,
    plan: &FoldPlan,
    sources: Option<&[Checkpoint]>,
) -> Result<CvRun> {
    plan.validate(data.n_observations())?;
    if spec.needs_policy_source() {
        match sources {
            Some(s) if s.len() == plan.k => {}
            _ => {
                return Err(Error::config(format!(
                    "{model_id}: one CNN 1 checkpoint per fold is required"
                )))
            }
        }
    }
    let cd = data.choice_data(spec.feature_dim())?;
    let outcomes: Vec<Result<(Fitted, FoldMetrics)>> = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let (train_obs, held) = plan.split(f);
            let source = if spec.needs_policy_source() {
                sources.map(|s| &s[f])
            } else {
                None
            };
            let fit = fit_model(spec, data, &train_obs, Some(&held), source)
                .map_err(|e| e.in_stage(format!("{model_id} fold {f}")))?;
            let m = fold_metrics(fit.utility_model(), cd, plan, f)?;
            Ok((fit, m))
        })
        .collect();
    let mut folds = Vec::with_capacity(plan.k);
    let mut per_fold = Vec::with_capacity(plan.k);
    for o in outcomes {
        let (fit, m) = o?;
        folds.push(fit);
        per_fold.push(m);
    }
    let tables: Vec<ParameterTable> = folds.iter().map(Fitted::parameter_table).collect();
    let report = fold_report(model_id, folds[0].parameter_count(), per_fold, &tables)?;
    Ok(CvRun { report, folds })
}
