//! Ridge regression on standardized columns with an unpenalized intercept,
//! and k-fold selection of the penalty.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DesignMatrix;
use crate::error::{Error, Result};
use crate::eval::metrics::r_squared;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RidgeOptions {
    /// Scale columns to unit variance; constant columns are dropped.
    pub standardize: bool,
    /// Centre columns and response and fit an unpenalized intercept.
    pub fit_intercept: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            standardize: true,
            fit_intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub col_names: Vec<String>,
    /// Indices into `col_names` of the columns that carry a coefficient.
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Coefficients in the centred/standardized space, one per kept column.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub options: RidgeOptions,
}

impl RidgeModel {
    /// `x` must already be aligned to `col_names`.
    pub(crate) fn predict_aligned(&self, x: &DesignMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .map(|i| {
                let row = x.row(i);
                self.intercept
                    + self
                        .kept
                        .iter()
                        .zip(&self.coefficients)
                        .zip(self.means.iter().zip(&self.scales))
                        .map(|((&j, b), (m, s))| b * (row[j] - m) / s)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Centred/scaled normal equations, reusable across penalties.
pub struct RidgeProblem {
    col_names: Vec<String>,
    kept: Vec<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    y_mean: f64,
    options: RidgeOptions,
}

impl RidgeProblem {
    pub fn new(x: &DesignMatrix, y: &[f64], options: RidgeOptions) -> Result<Self> {
        let n = x.n_rows();
        if y.len() != n {
            return Err(Error::Data(format!("{} labels for {n} rows", y.len())));
        }
        if n < 2 {
            return Err(Error::Data("ridge needs at least two rows".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("labels contain non-finite values".into()));
        }
        let nf = n as f64;
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for j in 0..x.n_cols() {
            let col = x.column(j);
            let mean = if options.fit_intercept {
                col.iter().sum::<f64>() / nf
            } else {
                0.0
            };
            let scale = if options.standardize {
                let m = col.iter().sum::<f64>() / nf;
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
                let sd = var.sqrt();
                if sd <= 1e-12 * m.abs().max(1.0) {
                    log::warn!("dropping constant column `{}`", x.col_names()[j]);
                    continue;
                }
                sd
            } else {
                1.0
            };
            kept.push(j);
            means.push(mean);
            scales.push(scale);
        }
        if kept.is_empty() {
            return Err(Error::Data("every column is constant".into()));
        }
        let k = kept.len();
        let z = DMatrix::from_fn(n, k, |i, c| (x.get(i, kept[c]) - means[c]) / scales[c]);
        let y_mean = if options.fit_intercept {
            y.iter().sum::<f64>() / nf
        } else {
            0.0
        };
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let gram = z.tr_mul(&z);
        let rhs = z.tr_mul(&yc);
        Ok(RidgeProblem {
            col_names: x.col_names().to_vec(),
            kept,
            means,
            scales,
            gram,
            rhs,
            y_mean,
            options,
        })
    }

    pub fn n_coefficients(&self) -> usize {
        self.kept.len()
    }

    /// `‖(ZᵀZ + λI)β − Zᵀ(y − ȳ)‖∞`
    pub fn residual(&self, beta: &[f64], lambda: f64) -> f64 {
        let b = DVector::from_column_slice(beta);
        let r = &self.gram * &b + &b * lambda - &self.rhs;
        r.amax()
    }

    pub fn residual_bound(&self) -> f64 {
        1e-8 * self.rhs.amax().max(1.0)
    }

    pub fn solve(&self, lambda: f64) -> Result<RidgeModel> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda {lambda} must be finite and >= 0"
            )));
        }
        let k = self.kept.len();
        let a = &self.gram + DMatrix::<f64>::identity(k, k) * lambda;
        let singular = || {
            Error::Singular(format!(
                "penalized normal equations are not positive definite at lambda = {lambda}; \
                 use lambda > 0 for rank-deficient features"
            ))
        };
        let chol = a.clone().cholesky().ok_or_else(singular)?;
        let mut beta = chol.solve(&self.rhs);
        // one step of iterative refinement
        let r = &self.rhs - &a * &beta;
        beta += chol.solve(&r);
        let beta: Vec<f64> = beta.iter().copied().collect();
        if beta.iter().any(|v| !v.is_finite())
            || self.residual(&beta, lambda) > self.residual_bound()
        {
            return Err(singular());
        }
        Ok(RidgeModel {
            col_names: self.col_names.clone(),
            kept: self.kept.clone(),
            means: self.means.clone(),
            scales: self.scales.clone(),
            coefficients: beta,
            intercept: self.y_mean,
            lambda,
            options: self.options,
        })
    }
}

pub fn fit_ridge(x: &DesignMatrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    fit_ridge_with(x, y, lambda, RidgeOptions::default())
}

pub fn fit_ridge_with(
    x: &DesignMatrix,
    y: &[f64],
    lambda: f64,
    options: RidgeOptions,
) -> Result<RidgeModel> {
    RidgeProblem::new(x, y, options)?.solve(lambda)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 13)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_lambda: f64,
    /// Grid values in ascending order.
    pub lambdas: Vec<f64>,
    /// `fold_scores[l][f]`: validation R² of lambda `l` on fold `f`.
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
}

impl CvResult {
    pub fn best_mean_score(&self) -> f64 {
        let i = self
            .lambdas
            .iter()
            .position(|&l| l == self.best_lambda)
            .expect("best lambda is on the grid");
        self.mean_scores[i]
    }
}

/// Fold index per row: a seeded permutation dealt round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        fold[i] = p % k;
    }
    fold
}

/// Picks the penalty with the highest mean validation R²; ties go to the
/// larger penalty.
pub fn cv_select_lambda(
    x: &DesignMatrix,
    y: &[f64],
    lambda_grid: &[f64],
    k_folds: usize,
    seed: u64,
    options: RidgeOptions,
) -> Result<CvResult> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if k_folds < 2 {
        return Err(Error::Config("cross-validation needs k_folds >= 2".into()));
    }
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::Data(format!("{} labels for {n} rows", y.len())));
    }
    let fold = fold_assignment(n, k_folds, seed);
    for f in 0..k_folds {
        let size = fold.iter().filter(|&&g| g == f).count();
        if size < 2 {
            return Err(Error::Data(format!(
                "fold {f} has {size} samples; each of the {k_folds} folds needs at least 2"
            )));
        }
    }
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| a.total_cmp(b));
    lambdas.dedup();

    let mut fold_scores = vec![Vec::with_capacity(k_folds); lambdas.len()];
    for f in 0..k_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let valid: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let xt = x.select_rows(&train)?;
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = x.select_rows(&valid)?;
        let yv: Vec<f64> = valid.iter().map(|&i| y[i]).collect();
        let problem = RidgeProblem::new(&xt, &yt, options)?;
        for (l, &lambda) in lambdas.iter().enumerate() {
            let model = problem.solve(lambda)?;
            let pred = model.predict_aligned(&xv);
            fold_scores[l].push(r_squared(&yv, &pred)?);
        }
    }
    let mean_scores: Vec<f64> = fold_scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let mut best = 0;
    for l in 1..lambdas.len() {
        let tol = 1e-12 * mean_scores[best].abs().max(1.0);
        if mean_scores[l] >= mean_scores[best] - tol {
            best = l;
        }
    }
    Ok(CvResult {
        best_lambda: lambdas[best],
        lambdas,
        fold_scores,
        mean_scores,
    })
}
