//! Cross-validation, accuracy metrics, the BL/CI decomposition, point
//! elasticities and report rendering.

pub mod cv;
pub mod elasticity;
pub mod folds;
pub mod report;

pub use cv::{
    cross_validate, fit_model, fold_mean_table, fold_metrics, fold_report, metrics, CvRun, Dataset, Fitted,
    ModelSpec,
};
pub use elasticity::{
    elasticity_study, point_elasticity, ElasticityCurve, ElasticityOptions, ElasticityStudy,
};
pub use folds::FoldPlan;
pub use report::{
    bl_ci, bl_ci_table, comparison_table, curves_csv, parameter_csv, parameter_text, report_json, BlCiRow,
};
