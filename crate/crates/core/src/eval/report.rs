//! Plain-text tables and CSV/JSON exports of evaluation results.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::elasticity::ElasticityCurve;
use crate::error::{Error, Result};
use crate::types::{EvalReport, MeanStd, ParameterTable};

/// Benefit of learning and cost of interpretability:
/// `BL = acc_c − acc_mnl`, `CI = acc_u − acc_c`.
pub fn bl_ci(acc_mnl: f64, acc_constrained: f64, acc_unconstrained: f64) -> (f64, f64) {
    (acc_constrained - acc_mnl, acc_unconstrained - acc_constrained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlCiRow {
    pub constrained: String,
    pub unconstrained: String,
    pub acc_mnl: f64,
    pub acc_constrained: f64,
    pub acc_unconstrained: f64,
    pub bl: f64,
    pub ci: f64,
}

impl BlCiRow {
    /// Decomposition from mean validation accuracies of three reports.
    pub fn from_reports(mnl: &EvalReport, constrained: &EvalReport, unconstrained: &EvalReport) -> Self {
        let (m, c, u) = (
            mnl.summary.valid_acc.mean,
            constrained.summary.valid_acc.mean,
            unconstrained.summary.valid_acc.mean,
        );
        let (bl, ci) = bl_ci(m, c, u);
        BlCiRow {
            constrained: constrained.model_id.clone(),
            unconstrained: unconstrained.model_id.clone(),
            acc_mnl: m,
            acc_constrained: c,
            acc_unconstrained: u,
            bl,
            ci,
        }
    }
}

fn pm(m: &MeanStd) -> String {
    format!("{:.4}±{:.4}", m.mean, m.std)
}

/// Cross-validated losses and accuracies, one row per model.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>10} {:>15} {:>15} {:>15} {:>15}",
        "Model", "Params", "Train loss", "Valid loss", "Train acc", "Valid acc"
    );
    for r in reports {
        let m = &r.summary;
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>15} {:>15} {:>15} {:>15}",
            r.model_id,
            r.parameter_count,
            pm(&m.train_loss),
            pm(&m.valid_loss),
            pm(&m.train_acc),
            pm(&m.valid_acc)
        );
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Estimates with standard errors and t-statistics.
pub fn parameter_text(title: &str, table: &ParameterTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(
        s,
        "{:<32} {:>12} {:>12} {:>12} {:>7}",
        "Parameter", "Estimate", "Std error", "t-stat", "Frozen"
    );
    for i in 0..table.len() {
        let _ = writeln!(
            s,
            "{:<32} {:>12.4} {:>12} {:>12} {:>7}",
            table.names[i],
            table.estimates[i],
            opt(table.std_errors.as_ref().map(|v| v[i])),
            opt(table.t_stats.as_ref().map(|v| v[i])),
            if table.frozen[i] { "yes" } else { "no" }
        );
    }
    s
}

pub fn bl_ci_table(rows: &[BlCiRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<12} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "Constrained", "Unconstr.", "MNL acc", "C acc", "U acc", "BL", "CI"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.constrained, r.unconstrained, r.acc_mnl, r.acc_constrained, r.acc_unconstrained, r.bl, r.ci
        );
    }
    s
}

fn csv_string<F>(header: &[&str], fill: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::structural(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    fill(&mut w).map_err(err)?;
    let bytes = w.into_inner().map_err(|e| Error::structural(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::structural(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Columns `name, estimate, std_error, t_stat, frozen`; missing statistics
/// are left empty.
pub fn parameter_csv(table: &ParameterTable) -> Result<String> {
    csv_string(&["name", "estimate", "std_error", "t_stat", "frozen"], |w| {
        for i in 0..table.len() {
            let se = table.std_errors.as_ref().map_or(String::new(), |v| num(v[i]));
            let t = table.t_stats.as_ref().map_or(String::new(), |v| num(v[i]));
            w.write_record([
                table.names[i].clone(),
                num(table.estimates[i]),
                se,
                t,
                table.frozen[i].to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Columns `attribute, x, mean, std, model_id`, one row per grid point.
pub fn curves_csv(curves: &[ElasticityCurve]) -> Result<String> {
    csv_string(&["attribute", "x", "mean", "std", "model_id"], |w| {
        for c in curves {
            for k in 0..c.grid.len() {
                w.write_record([
                    c.attribute.name().to_string(),
                    num(c.grid[k]),
                    num(c.mean_elasticity[k]),
                    num(c.std_band[k]),
                    c.model_id.clone(),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn report_json(report: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}
