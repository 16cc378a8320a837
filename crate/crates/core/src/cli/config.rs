use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetConfig, GroundTruthUtility, NetworkConfig};
use crate::error::{Error, Result};
use crate::eval::{ElasticityOptions, ModelSpec};
use crate::features::{TransformSpec, CONTEXT_DIM};
use crate::models::{DcmSpec, DeepKind, DeepSpec, Schedule, Selection, TransformerConfig};
use crate::types::POLICY_DIM;

/// Seeds not tied to a single model. Each deep model carries its own
/// `init_seed` and its schedule `seed` (shuffling and dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub folds: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { data: 5, folds: 11 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticityConfig {
    #[serde(flatten)]
    pub options: ElasticityOptions,
    /// Models to probe; empty means every model.
    pub models: Vec<String>,
}

impl Default for ElasticityConfig {
    fn default() -> Self {
        ElasticityConfig {
            options: ElasticityOptions::default(),
            models: Vec::new(),
        }
    }
}

/// One benefit-of-learning / cost-of-interpretability comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub mnl: String,
    pub constrained: String,
    pub unconstrained: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    pub network: NetworkConfig,
    pub data: DatasetConfig,
    pub truth: GroundTruthUtility,
    /// Attribute transforms applied to model inputs.
    pub transform: TransformSpec,
    pub cv: CvConfig,
    pub elasticity: ElasticityConfig,
    pub comparisons: Vec<Comparison>,
    /// Estimated and trained in this order.
    pub models: Vec<ModelEntry>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("run"),
            seeds: Seeds::default(),
            network: NetworkConfig::default(),
            data: DatasetConfig::default(),
            truth: GroundTruthUtility::with_landuse_effects(),
            transform: TransformSpec::default(),
            cv: CvConfig::default(),
            elasticity: ElasticityConfig::default(),
            comparisons: vec![
                Comparison {
                    mnl: "MNL".into(),
                    constrained: "CNN2C".into(),
                    unconstrained: "CNN2U".into(),
                },
                Comparison {
                    mnl: "MNL".into(),
                    constrained: "TFMC".into(),
                    unconstrained: "TFMU".into(),
                },
            ],
            models: default_models(TransformerConfig::scaled(32), 20),
        }
    }
}

/// The full model sequence: MNL, PSL, CNN 1, the quadratic CNNs, then the
/// Transformers.
pub fn default_models(tfm: TransformerConfig, tfm_epochs: usize) -> Vec<ModelEntry> {
    let cnn1 = Schedule {
        epochs: 2000,
        lr: 0.2,
        lr_min: Some(1e-5),
        batch_size: None,
        selection: Selection::Final,
        ..Schedule::default()
    };
    let cnn2 = Schedule {
        epochs: 100,
        lr: 1e-2,
        ..Schedule::default()
    };
    let tfm_schedule = Schedule {
        epochs: tfm_epochs,
        lr: 3e-2,
        batch_size: Some(256),
        ..Schedule::default()
    };
    let deep = |id: &str, spec: DeepSpec, schedule: Schedule| ModelEntry {
        id: id.into(),
        spec: ModelSpec::Deep {
            spec,
            schedule,
            init_seed: 0,
        },
    };
    vec![
        ModelEntry {
            id: "MNL".into(),
            spec: ModelSpec::Dcm { spec: DcmSpec::mnl() },
        },
        ModelEntry {
            id: "PSL".into(),
            spec: ModelSpec::Dcm { spec: DcmSpec::psl() },
        },
        deep("CNN1", DeepSpec::new(DeepKind::Cnn1, POLICY_DIM), cnn1),
        deep("CNN2U", DeepSpec::new(DeepKind::Cnn2U, CONTEXT_DIM), cnn2),
        deep("CNN2S", DeepSpec::new(DeepKind::Cnn2S, CONTEXT_DIM), cnn2),
        deep("CNN2C", DeepSpec::constrained(DeepKind::Cnn2C, "CNN1"), cnn2),
        deep(
            "TFMC",
            DeepSpec::constrained(DeepKind::TfmC, "CNN1").with_transformer(tfm),
            tfm_schedule,
        ),
        deep(
            "TFMU",
            DeepSpec::new(DeepKind::TfmU, CONTEXT_DIM).with_transformer(tfm),
            tfm_schedule,
        ),
    ]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn model(&self, id: &str) -> Result<&ModelEntry> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::config(format!("no model `{id}` in the config")))
    }

    /// Ids to probe for elasticities, in model order.
    pub fn elasticity_models(&self) -> Vec<&ModelEntry> {
        let wanted = &self.elasticity.models;
        self.models
            .iter()
            .filter(|m| wanted.is_empty() || wanted.contains(&m.id))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.truth.validate()?;
        self.transform.validate()?;
        if self.data.n_od == 0 || self.data.n_observations == 0 {
            return Err(Error::config("data.n_od and data.n_observations must be positive"));
        }
        if self.cv.folds < 2 {
            return Err(Error::config("cv.folds must be at least 2"));
        }
        if self.cv.folds > self.data.n_observations {
            return Err(Error::config("more folds than observations"));
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (pos, m) in self.models.iter().enumerate() {
            if m.id.is_empty() || m.id.contains(['/', '\\']) || m.id.starts_with('.') {
                return Err(Error::config(format!("model id `{}` is not a valid file name", m.id)));
            }
            if !seen.insert(&m.id) {
                return Err(Error::config(format!("duplicate model id `{}`", m.id)));
            }
            if let ModelSpec::Deep { spec, schedule, .. } = &m.spec {
                spec.validate().map_err(|e| e.in_stage(&m.id))?;
                schedule.validate().map_err(|e| e.in_stage(&m.id))?;
                if let Some(src) = &spec.frozen_policy_source {
                    let earlier = self.models[..pos].iter().find(|e| &e.id == src);
                    match earlier {
                        Some(ModelEntry {
                            spec: ModelSpec::Deep { spec: s, .. },
                            ..
                        }) if s.kind == DeepKind::Cnn1 => {}
                        Some(_) => {
                            return Err(Error::config(format!("{}: source `{src}` is not a CNN 1", m.id)));
                        }
                        None => {
                            return Err(Error::config(format!(
                                "{}: CNN 1 source `{src}` must be listed before it",
                                m.id
                            )));
                        }
                    }
                }
            }
        }
        for id in &self.elasticity.models {
            self.model(id)?;
        }
        for c in &self.comparisons {
            for id in [&c.mnl, &c.constrained, &c.unconstrained] {
                self.model(id)?;
            }
        }
        Ok(())
    }
}
