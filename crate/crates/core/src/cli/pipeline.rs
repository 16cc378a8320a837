//! Run stages: data generation, per-model cross-validation with saved
//! artifacts, and report tables rebuilt from those artifacts.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::io;
use crate::datagen::generate_dataset;
use crate::engine::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::report::{bl_ci_table, comparison_table, curves_csv, parameter_csv, parameter_text, report_json};
use crate::eval::{
    cross_validate, elasticity_study, fold_metrics, fold_report, BlCiRow, Dataset, ElasticityCurve, Fitted,
    FoldPlan, ModelSpec,
};
use crate::models::{DcmFit, DeepModel, UtilityModel};
use crate::types::{EvalReport, ParameterTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSummary {
    pub n_od: usize,
    pub n_observations: usize,
    pub mean_set_size: f64,
}

impl fmt::Display for DataSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "OD pairs:             {}", self.n_od)?;
        writeln!(f, "observations:         {}", self.n_observations)?;
        write!(f, "mean choice-set size: {:.3}", self.mean_set_size)
    }
}

/// Generate the network and observations and write them to `out_dir`.
pub fn gen_data(config: &RunConfig, out_dir: &Path, seed: u64) -> Result<DataSummary> {
    let (net, obs) = generate_dataset(&config.network, &config.data, &config.truth, seed)?;
    io::write_dataset(out_dir, &net, &obs)?;
    let ods: BTreeSet<_> = obs.iter().map(|o| o.od_pair).collect();
    let total: usize = obs.iter().map(|o| o.alternatives.len()).sum();
    Ok(DataSummary {
        n_od: ods.len(),
        n_observations: obs.len(),
        mean_set_size: total as f64 / obs.len() as f64,
    })
}

/// A fitted fold model read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Dcm(DcmFit),
    Deep(DeepModel),
}

impl Artifact {
    pub fn utility_model(&self) -> &dyn UtilityModel {
        match self {
            Artifact::Dcm(f) => f,
            Artifact::Deep(m) => m,
        }
    }

    pub fn parameter_table(&self) -> ParameterTable {
        match self {
            Artifact::Dcm(f) => f.table.clone(),
            Artifact::Deep(m) => m.parameter_table(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Artifact::Dcm(f) => f.table.len(),
            Artifact::Deep(m) => m.parameter_count(),
        }
    }
}

/// A configured run: where its dataset lives and where outputs go.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub run_dir: PathBuf,
    pub data_dir: PathBuf,
}

/// The dataset with its fold assignment.
#[derive(Debug, Clone)]
pub struct RunData {
    pub dataset: Dataset,
    pub plan: FoldPlan,
}

impl Run {
    /// `run_dir` defaults to the config's output directory and `data_dir`
    /// to `<run_dir>/data`.
    pub fn new(config: RunConfig, run_dir: Option<PathBuf>, data_dir: Option<PathBuf>) -> Self {
        let run_dir = run_dir.unwrap_or_else(|| config.output_dir.clone());
        let data_dir = data_dir.unwrap_or_else(|| run_dir.join("data"));
        Run {
            config,
            run_dir,
            data_dir,
        }
    }

    pub fn model_dir(&self, id: &str) -> PathBuf {
        self.run_dir.join("models").join(id)
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.run_dir.join("tables")
    }

    pub fn report_path(&self, id: &str) -> PathBuf {
        self.run_dir.join("reports").join(format!("{id}.json"))
    }

    fn artifact_path(&self, id: &str, fold: usize, deep: bool) -> PathBuf {
        let ext = if deep { "ckpt" } else { "json" };
        self.model_dir(id).join(format!("fold{fold}.{ext}"))
    }

    pub fn load_data(&self) -> Result<RunData> {
        let (_, obs) = io::read_dataset(&self.data_dir)?;
        let n = obs.len();
        let dataset = Dataset::new(obs, self.config.transform)?;
        let plan = FoldPlan::new(n, self.config.cv.folds, self.config.seeds.folds)?;
        Ok(RunData { dataset, plan })
    }

    fn load_checkpoints(&self, id: &str, k: usize) -> Result<Vec<Checkpoint>> {
        (0..k).map(|f| Checkpoint::load(&self.artifact_path(id, f, true))).collect()
    }

    /// Cross-validate one configured model and save its fold artifacts and
    /// report. Constrained models read their source's fold checkpoints.
    pub fn fit(&self, data: &RunData, id: &str) -> Result<EvalReport> {
        self.fit_inner(data, id).map_err(|e| e.in_stage(id))
    }

    fn fit_inner(&self, data: &RunData, id: &str) -> Result<EvalReport> {
        let entry = self.config.model(id)?;
        let k = data.plan.k;
        let sources = match &entry.spec {
            ModelSpec::Deep { spec, .. } => match &spec.frozen_policy_source {
                Some(src) => Some(self.load_checkpoints(src, k).map_err(|e| {
                    Error::config(format!("checkpoints of `{src}` are missing; fit it first ({e})"))
                })?),
                None => None,
            },
            ModelSpec::Dcm { .. } => None,
        };
        let cv = cross_validate(id, &entry.spec, &data.dataset, &data.plan, sources.as_deref())?;
        for (f, fit) in cv.folds.iter().enumerate() {
            match fit {
                Fitted::Dcm(d) => {
                    io::write_text(&self.artifact_path(id, f, false), &serde_json::to_string_pretty(d)?)?;
                }
                Fitted::Deep(m) => {
                    let path = self.artifact_path(id, f, true);
                    std::fs::create_dir_all(self.model_dir(id))?;
                    m.model.to_checkpoint().save(&path)?;
                    let mut hist = format!("# best_epoch {}\nepoch,train_loss,valid_loss,valid_acc\n", m.best_epoch);
                    for h in &m.history {
                        hist.push_str(&format!("{},{},{},{}\n", h.epoch, h.train_loss, h.valid_loss, h.valid_acc));
                    }
                    io::write_text(&self.model_dir(id).join(format!("fold{f}.history.csv")), &hist)?;
                }
            }
        }
        io::write_text(&self.report_path(id), &report_json(&cv.report)?)?;
        Ok(cv.report)
    }

    /// Fold models of `id` as saved by [`Run::fit`].
    pub fn load_artifacts(&self, id: &str, k: usize) -> Result<Vec<Artifact>> {
        let entry = self.config.model(id)?;
        let deep = matches!(entry.spec, ModelSpec::Deep { .. });
        (0..k)
            .map(|f| {
                let path = self.artifact_path(id, f, deep);
                if deep {
                    Ok(Artifact::Deep(DeepModel::from_checkpoint(&Checkpoint::load(&path)?)?))
                } else {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
                    Ok(Artifact::Dcm(serde_json::from_str(&text)?))
                }
            })
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage(format!("load {id}")))
    }

    /// Recompute a model's cross-validated report from its saved folds.
    pub fn evaluate(&self, data: &RunData, id: &str) -> Result<EvalReport> {
        let entry = self.config.model(id)?;
        let arts = self.load_artifacts(id, data.plan.k)?;
        let cd = data.dataset.choice_data(entry.spec.feature_dim())?;
        let per_fold = arts
            .iter()
            .enumerate()
            .map(|(f, a)| fold_metrics(a.utility_model(), cd, &data.plan, f))
            .collect::<Result<Vec<_>>>()?;
        let tables: Vec<ParameterTable> = arts.iter().map(Artifact::parameter_table).collect();
        fold_report(id, arts[0].parameter_count(), per_fold, &tables)
    }

    /// Elasticity curves of the fold-0 models of the listed ids.
    pub fn elasticities(&self, data: &RunData, ids: &[String]) -> Result<Vec<ElasticityCurve>> {
        let arts = ids
            .iter()
            .map(|id| Ok(self.load_artifacts(id, 1)?.remove(0)))
            .collect::<Result<Vec<_>>>()?;
        let models: Vec<(&str, &dyn UtilityModel)> =
            ids.iter().zip(&arts).map(|(id, a)| (id.as_str(), a.utility_model())).collect();
        let study = elasticity_study(
            &models,
            data.dataset.observations(),
            data.dataset.transform(),
            &self.config.elasticity.options,
        )?;
        Ok(study.curves)
    }

    /// Rebuild every report and table from saved artifacts. Returns the
    /// files written.
    pub fn report(&self, data: &RunData) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut put = |path: PathBuf, text: &str| -> Result<()> {
            io::write_text(&path, text)?;
            written.push(path);
            Ok(())
        };
        let mut reports = Vec::new();
        for m in &self.config.models {
            let r = self.evaluate(data, &m.id).map_err(|e| e.in_stage(format!("evaluate {}", m.id)))?;
            put(self.report_path(&m.id), &report_json(&r)?)?;
            reports.push(r);
        }
        let tables = self.tables_dir();
        put(tables.join("comparison.txt"), &comparison_table(&reports))?;
        let mut text = String::new();
        for r in &reports {
            text.push_str(&parameter_text(&r.model_id, &r.parameter_table));
            text.push('\n');
            put(
                tables.join(format!("parameters_{}.csv", r.model_id)),
                &parameter_csv(&r.parameter_table)?,
            )?;
        }
        put(tables.join("parameters.txt"), &text)?;

        let find = |id: &str| reports.iter().find(|r| r.model_id == id).expect("validated id");
        let rows: Vec<BlCiRow> = self
            .config
            .comparisons
            .iter()
            .map(|c| BlCiRow::from_reports(find(&c.mnl), find(&c.constrained), find(&c.unconstrained)))
            .collect();
        put(tables.join("bl_ci.txt"), &bl_ci_table(&rows))?;
        put(tables.join("bl_ci.json"), &serde_json::to_string_pretty(&rows)?)?;

        let ids: Vec<String> = self.config.elasticity_models().iter().map(|m| m.id.clone()).collect();
        if !ids.is_empty() {
            let curves = self.elasticities(data, &ids).map_err(|e| e.in_stage("elasticity"))?;
            put(tables.join("elasticity.csv"), &curves_csv(&curves)?)?;
        }
        Ok(written)
    }

    /// Fit every model in order, then build the reports. Stops at the
    /// first failing stage; outputs of earlier stages stay on disk.
    pub fn pipeline(&self, mut progress: impl FnMut(&str)) -> Result<Vec<PathBuf>> {
        let data = self.load_data().map_err(|e| e.in_stage("load data"))?;
        io::write_text(&self.run_dir.join("config.toml"), &self.config.to_toml()?)?;
        for m in &self.config.models {
            let r = self.fit(&data, &m.id)?;
            progress(&format!(
                "{:<8} valid acc {:.4} ± {:.4}",
                m.id, r.summary.valid_acc.mean, r.summary.valid_acc.std
            ));
        }
        self.report(&data)
    }
}
