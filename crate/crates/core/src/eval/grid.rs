use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::Cohort;
use crate::embed::{init_model, EmbedConfig, EmbeddingModel, ModelKind};
use crate::error::{Error, Result};
use crate::models::{cv_select_lambda, default_lambda_grid, DesignMatrix, RidgeOptions};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub model: ModelKind,
    pub dim: usize,
    pub window: usize,
}

impl GridPoint {
    fn key(&self) -> (&'static str, usize, usize) {
        (self.model.as_str(), self.dim, self.window)
    }

    /// Cartesian product in (model, dim, window) order.
    pub fn product(models: &[ModelKind], dims: &[usize], windows: &[usize]) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(models.len() * dims.len() * windows.len());
        for &model in models {
            for &dim in dims {
                for &window in windows {
                    out.push(GridPoint { model, dim, window });
                }
            }
        }
        out
    }

    /// {PV-DBOW, PV-DM} × {100, 200, 300} × {10, 15, 20}.
    pub fn full_grid() -> Vec<GridPoint> {
        GridPoint::product(
            &[ModelKind::PvDbow, ModelKind::PvDm],
            &[100, 200, 300],
            &[10, 15, 20],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    #[serde(flatten)]
    pub point: GridPoint,
    /// Mean k-fold validation R² of ridge on the document vectors.
    pub cv_r2: Option<f64>,
    pub best_lambda: Option<f64>,
    pub error: Option<String>,
}

impl GridEntry {
    pub fn failed(&self) -> bool {
        self.cv_r2.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub entries: Vec<GridEntry>,
    pub best: Option<GridEntry>,
}

impl GridResult {
    pub fn from_entries(entries: Vec<GridEntry>) -> Self {
        let best = select_best(&entries).cloned();
        GridResult { entries, best }
    }

    pub fn failures(&self) -> impl Iterator<Item = &GridEntry> {
        self.entries.iter().filter(|e| e.failed())
    }
}

/// Highest `cv_r2`; exact ties go to the smallest (model, dim, window).
/// Independent of entry order.
pub fn select_best(entries: &[GridEntry]) -> Option<&GridEntry> {
    entries
        .iter()
        .filter(|e| e.cv_r2.is_some_and(f64::is_finite))
        .min_by(|a, b| {
            let (ra, rb) = (a.cv_r2.unwrap(), b.cv_r2.unwrap());
            rb.partial_cmp(&ra)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.point.key().cmp(&b.point.key()))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub lambda_grid: Vec<f64>,
    pub k_folds: usize,
    pub seed: u64,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            lambda_grid: default_lambda_grid(),
            k_folds: 5,
            seed: 1,
        }
    }
}

pub fn embedding_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("emb_{j:03}")).collect()
}

/// Document vectors of `ids`, one row each.
pub fn embedding_design_matrix(model: &EmbeddingModel, ids: &[String]) -> Result<DesignMatrix> {
    let mut values = Vec::with_capacity(ids.len() * model.dim());
    for id in ids {
        let v = model
            .doc_vector(id)
            .ok_or_else(|| Error::Data(format!("no document vector for patient `{id}`")))?;
        values.extend_from_slice(v);
    }
    DesignMatrix::new(embedding_columns(model.dim()), values)
}

fn run_entry(
    point: GridPoint,
    cohort: &Cohort,
    vocab: &Vocabulary,
    base: &EmbedConfig,
    scores: &HashMap<&str, f64>,
    train_ids: &[String],
    cv: &CvSettings,
) -> Result<(f64, f64)> {
    let config = EmbedConfig {
        model: point.model,
        dim: point.dim,
        window: point.window,
        ..base.clone()
    };
    let mut model = init_model(config, vocab.clone(), cohort.patient_ids())?;
    model.train(cohort)?;
    let x = embedding_design_matrix(&model, train_ids)?;
    let y = train_ids
        .iter()
        .map(|id| {
            scores
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("no label for patient `{id}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let res = cv_select_lambda(
        &x,
        &y,
        &cv.lambda_grid,
        cv.k_folds,
        cv.seed,
        RidgeOptions::default(),
    )?;
    Ok((res.best_mean_score(), res.best_lambda))
}

/// Trains one embedding per grid point on `cohort` and scores it by
/// cross-validated ridge R² over `train_ids`. Failed entries are kept with
/// their error; entries run in parallel.
pub fn run_grid(
    cohort: &Cohort,
    vocab: &Vocabulary,
    scores: &HashMap<&str, f64>,
    grid: &[GridPoint],
    train_ids: &[String],
    base: &EmbedConfig,
    cv: &CvSettings,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("embedding grid is empty".into()));
    }
    let entries: Vec<GridEntry> = grid
        .par_iter()
        .map(
            |&point| match run_entry(point, cohort, vocab, base, scores, train_ids, cv) {
                Ok((r2, lambda)) => {
                    log::info!(
                        "grid {} dim={} window={}: cv R2 {r2:.4}",
                        point.model.as_str(),
                        point.dim,
                        point.window
                    );
                    GridEntry {
                        point,
                        cv_r2: Some(r2),
                        best_lambda: Some(lambda),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!(
                        "grid {} dim={} window={} failed: {e}",
                        point.model.as_str(),
                        point.dim,
                        point.window
                    );
                    GridEntry {
                        point,
                        cv_r2: None,
                        best_lambda: None,
                        error: Some(e.to_string()),
                    }
                }
            },
        )
        .collect();
    Ok(GridResult::from_entries(entries))
}
