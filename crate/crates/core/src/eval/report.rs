//! Evaluation report: JSON schema and aligned-text rendering.
//!
//! JSON (`schema` = `claimvec-evaluation/1`):
//!
//! ```text
//! {
//!   "schema": "claimvec-evaluation/1",
//!   "model_name": "embedding+gbt",
//!   "r2": 0.41, "mae": 0.73, "n_test": 1500,
//!   "pr_population": "all", "n_pr": 5000,
//!   "predictive_ratios": [{"sex": "M", "age_band": "(0, 1]", "n": 40, "pr": 0.93}, ...],
//!   "config": { ... }
//! }
//! ```
//!
//! `pr` is `null` for a cell whose actual mean is zero. Only populated cells
//! appear, males first, bands ascending.

use serde::{Deserialize, Serialize};

use super::metrics::{mae, predictive_ratios, r_squared};
use crate::bands::{AgeBand, Group};
use crate::claims::Sex;
use crate::error::{Error, Result};
use crate::models::{DesignMatrix, FittedModel};

pub const REPORT_SCHEMA: &str = "claimvec-evaluation/1";
const UNDEFINED: &str = "\u{2014}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrEntry {
    pub sex: Sex,
    pub age_band: AgeBand,
    pub n: usize,
    pub pr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub model_name: String,
    pub r2: f64,
    pub mae: f64,
    pub n_test: usize,
    /// `all` or `test`.
    pub pr_population: String,
    pub n_pr: usize,
    pub predictive_ratios: Vec<PrEntry>,
    pub config: serde_json::Value,
}

/// Rows to score: features, risk scores, and (sex, band) cells.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub x: &'a DesignMatrix,
    pub actual: &'a [f64],
    pub groups: &'a [Group],
}

/// R² and MAE on `test`; predictive ratios on `pr_set` (the test rows when
/// `None`).
pub fn evaluate(
    model_name: &str,
    model: &FittedModel,
    test: EvalSet<'_>,
    pr_set: Option<EvalSet<'_>>,
    config: serde_json::Value,
) -> Result<EvaluationReport> {
    if test.actual.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty test set".into()));
    }
    let pred = model.predict(test.x)?;
    let r2 = r_squared(test.actual, &pred)?;
    let mae = mae(test.actual, &pred)?;
    let (pr_label, pr_pred, pr) = match pr_set {
        Some(set) => ("all", model.predict(set.x)?, set),
        None => ("test", pred, test),
    };
    let cells = predictive_ratios(&pr_pred, pr.actual, pr.groups)?;
    Ok(EvaluationReport {
        schema: REPORT_SCHEMA.to_string(),
        model_name: model_name.to_string(),
        r2,
        mae,
        n_test: test.actual.len(),
        pr_population: pr_label.to_string(),
        n_pr: pr.actual.len(),
        predictive_ratios: cells
            .into_iter()
            .map(|c| PrEntry {
                sex: c.group.sex,
                age_band: c.group.band,
                n: c.n,
                pr: c.pr,
            })
            .collect(),
        config,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvaluationReport = serde_json::from_str(text)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::VersionMismatch {
                found: r.schema,
                expected: REPORT_SCHEMA.to_string(),
            });
        }
        Ok(r)
    }
}

fn pad_table(rows: &[Vec<String>], right_align_from: usize) -> String {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| {
                let pad = w - s.chars().count();
                if c >= right_align_from {
                    format!("{}{s}", " ".repeat(pad))
                } else {
                    format!("{s}{}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// One row per model: R², MAE and test size.
pub fn render_fit_table(reports: &[EvaluationReport]) -> String {
    let mut rows = vec![vec![
        "Model".to_string(),
        "R2".into(),
        "MAE".into(),
        "N test".into(),
    ]];
    for r in reports {
        rows.push(vec![
            r.model_name.clone(),
            format!("{:.3}", r.r2),
            format!("{:.3}", r.mae),
            r.n_test.to_string(),
        ]);
    }
    pad_table(&rows, 1)
}

/// One row per populated (sex, band) cell, one PR column per model.
pub fn render_pr_table(reports: &[EvaluationReport]) -> String {
    let mut header = vec!["Sex".to_string(), "Age".into(), "N".into()];
    header.extend(reports.iter().map(|r| r.model_name.clone()));
    let mut rows = vec![header];
    for g in Group::all() {
        let find = |r: &EvaluationReport| {
            r.predictive_ratios
                .iter()
                .find(|e| e.sex == g.sex && e.age_band == g.band)
                .cloned()
        };
        let Some(n) = reports.iter().find_map(|r| find(r).map(|e| e.n)) else {
            continue;
        };
        let sex = match g.sex {
            Sex::Male => "Male",
            Sex::Female => "Female",
        };
        let mut row = vec![sex.to_string(), g.band.label(), n.to_string()];
        for r in reports {
            row.push(match find(r).and_then(|e| e.pr) {
                Some(pr) => format!("{pr:.3}"),
                None => UNDEFINED.to_string(),
            });
        }
        rows.push(row);
    }
    pad_table(&rows, 2)
}

pub fn render_text(reports: &[EvaluationReport]) -> String {
    let n_pr = reports.first().map(|r| r.n_pr).unwrap_or(0);
    format!(
        "Individual-level fit (test set)\n\n{}\nPredictive ratios by age and sex (N = {n_pr})\n\n{}",
        render_fit_table(reports),
        render_pr_table(reports)
    )
}
