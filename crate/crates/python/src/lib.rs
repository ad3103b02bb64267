//! Python bindings: cohort assembly, vocabulary, document embeddings,
//! ridge and boosted-tree learners, evaluation metrics and the pipeline.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use claimvec::bands::Group;
use claimvec::claims::{build_cohort, parse_claims, parse_members, Sex};
use claimvec::embed::{self, EmbedConfig, ModelKind};
use claimvec::error::Error;
use claimvec::eval;
use claimvec::features::{self, CodeSetMap, FEATURE_NAMES};
use claimvec::models::{self, DesignMatrix, FittedModel, GbtParams, RidgeOptions};
use claimvec::pipeline::{self, Pipeline, PipelineConfig};
use claimvec::synth::{self, PopulationSpec};
use claimvec::vocab;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for claimvec::error::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn design(x: Vec<Vec<f64>>, columns: Option<Vec<String>>) -> PyResult<DesignMatrix> {
    let p = x.first().map_or(0, Vec::len);
    let names = columns.unwrap_or_else(|| (0..p).map(|j| format!("x{j}")).collect());
    DesignMatrix::from_rows(names, &x).py_err()
}

/// Patients with claims and enrollment in both years, one document each.
#[pyclass(name = "Cohort", module = "claimvec", frozen)]
struct PyCohort {
    inner: claimvec::claims::Cohort,
}

#[pymethods]
impl PyCohort {
    #[staticmethod]
    #[pyo3(signature = (claims, members, base_year=2015, target_year=2016))]
    fn from_files(claims: PathBuf, members: PathBuf, base_year: i32, target_year: i32) -> PyResult<Self> {
        let c = parse_claims(&claims).py_err()?;
        let m = parse_members(&members).py_err()?;
        Ok(PyCohort {
            inner: build_cohort(&c, &m, base_year, target_year).py_err()?,
        })
    }

    /// Generates the bundled default population (or `spec`) and assembles it.
    #[staticmethod]
    #[pyo3(signature = (n_patients=None, seed=None, spec=None))]
    fn synthetic(n_patients: Option<usize>, seed: Option<u64>, spec: Option<PathBuf>) -> PyResult<Self> {
        let spec = load_spec(n_patients, seed, spec)?;
        let pop = synth::generate(&spec).py_err()?;
        Ok(PyCohort {
            inner: build_cohort(&pop.claims, &pop.members, spec.base_year, spec.target_year).py_err()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn base_year(&self) -> i32 {
        self.inner.base_year
    }

    #[getter]
    fn target_year(&self) -> i32 {
        self.inner.target_year
    }

    fn patient_ids(&self) -> Vec<String> {
        self.inner.patient_ids()
    }

    /// Base-year codes of one patient in chronological order.
    fn tokens(&self, patient_id: &str) -> PyResult<Vec<String>> {
        self.inner
            .documents
            .iter()
            .find(|d| d.patient_id == patient_id)
            .map(|d| d.tokens.clone())
            .ok_or_else(|| PyKeyError::new_err(patient_id.to_string()))
    }

    fn subset(&self, ids: Vec<String>) -> Self {
        PyCohort {
            inner: self.inner.subset(&ids),
        }
    }

    /// `(column names, rows)` of the 21 engineered baseline features.
    #[pyo3(signature = (code_map=None))]
    fn features(&self, code_map: Option<PathBuf>) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
        let map = match code_map {
            Some(p) => CodeSetMap::from_json_file(p).py_err()?,
            None => CodeSetMap::demo(),
        };
        let rows = features::extract_features(&self.inner, &map).py_err()?;
        Ok((
            FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|r| r.values.to_vec()).collect(),
        ))
    }

    /// Patient id → risk score (annualized target-year cost over the cohort mean).
    #[pyo3(signature = (cost_cap=None))]
    fn risk_scores(&self, cost_cap: Option<f64>) -> PyResult<HashMap<String, f64>> {
        let labels = features::compute_risk_labels(&self.inner, self.inner.target_year, cost_cap).py_err()?;
        Ok(labels.into_iter().map(|l| (l.patient_id, l.risk_score)).collect())
    }

    /// `(sex, age)` per patient in cohort order, sex as `"M"`/`"F"`.
    fn demographics(&self) -> Vec<(String, i32)> {
        self.inner
            .documents
            .iter()
            .map(|d| (d.member.sex.as_str().to_string(), d.member.age_in(self.inner.base_year)))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cohort({} patients, {}→{})",
            self.inner.len(),
            self.inner.base_year,
            self.inner.target_year
        )
    }
}

fn load_spec(n_patients: Option<usize>, seed: Option<u64>, spec: Option<PathBuf>) -> PyResult<PopulationSpec> {
    let mut spec = match spec {
        Some(p) => PopulationSpec::from_json_file(p).py_err()?,
        None => PopulationSpec::default_population(),
    };
    if let Some(n) = n_patients {
        spec.n_patients = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

/// Writes `claims.csv` and `members.csv`; returns their row counts.
#[pyfunction]
#[pyo3(signature = (out_dir, n_patients=None, seed=None, spec=None))]
fn synthesize(out_dir: PathBuf, n_patients: Option<usize>, seed: Option<u64>, spec: Option<PathBuf>) -> PyResult<(usize, usize)> {
    let spec = load_spec(n_patients, seed, spec)?;
    let pop = synth::generate(&spec).py_err()?;
    pop.write_to_dir(&out_dir).py_err()?;
    Ok((pop.members.len(), pop.claims.len()))
}

#[pyclass(name = "Vocabulary", module = "claimvec", frozen)]
struct PyVocabulary {
    inner: vocab::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    fn noise_probs(&self) -> Vec<f64> {
        self.inner.noise_probs().to_vec()
    }

    fn id(&self, token: &str) -> Option<usize> {
        self.inner.id(token)
    }
}

#[pyfunction]
#[pyo3(signature = (cohort, min_count=1, alpha=0.75))]
fn build_vocab(cohort: &PyCohort, min_count: u64, alpha: f64) -> PyResult<PyVocabulary> {
    Ok(PyVocabulary {
        inner: vocab::build_vocab(&cohort.inner, min_count, alpha).py_err()?,
    })
}

#[pyclass(name = "EmbeddingModel", module = "claimvec", frozen)]
struct PyEmbeddingModel {
    inner: embed::EmbeddingModel,
    losses: Vec<f64>,
}

#[pymethods]
impl PyEmbeddingModel {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_docs(&self) -> usize {
        self.inner.n_docs()
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.config().model.as_str()
    }

    /// Mean negative-sampling loss per epoch of the training run.
    #[getter]
    fn epoch_losses(&self) -> Vec<f64> {
        self.losses.clone()
    }

    fn doc_ids(&self) -> Vec<String> {
        self.inner.doc_ids().to_vec()
    }

    fn doc_vector(&self, patient_id: &str) -> PyResult<Vec<f64>> {
        self.inner
            .doc_vector(patient_id)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyKeyError::new_err(patient_id.to_string()))
    }

    fn word_vector(&self, code: &str) -> PyResult<Vec<f64>> {
        self.inner
            .word_vector(code)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyKeyError::new_err(code.to_string()))
    }

    /// Fits a vector for unseen codes with the word matrices frozen.
    #[pyo3(signature = (tokens, epochs=20, lr=0.025, seed=0))]
    fn infer(&self, py: Python<'_>, tokens: Vec<String>, epochs: usize, lr: f64, seed: u64) -> PyResult<Vec<f64>> {
        py.detach(|| self.inner.infer_doc_vector(&tokens, epochs, lr, seed)).py_err()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        embed::save_model(&self.inner, path).py_err()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEmbeddingModel {
            inner: embed::load_model(path).py_err()?,
            losses: Vec::new(),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingModel({}, dim={}, docs={}, codes={})",
            self.model(),
            self.inner.dim(),
            self.inner.n_docs(),
            self.inner.vocab().len()
        )
    }
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    cohort, model="PV_DBOW", dim=100, window=15, epochs=10, negatives=5, seed=1, workers=1,
    lr_start=0.025, lr_end=1e-4, joint_word_training=false, min_count=1, alpha=0.75,
))]
fn train_embedding(
    py: Python<'_>,
    cohort: &PyCohort,
    model: &str,
    dim: usize,
    window: usize,
    epochs: usize,
    negatives: usize,
    seed: u64,
    workers: usize,
    lr_start: f64,
    lr_end: f64,
    joint_word_training: bool,
    min_count: u64,
    alpha: f64,
) -> PyResult<PyEmbeddingModel> {
    let config = EmbedConfig {
        model: model.parse::<ModelKind>().py_err()?,
        dim,
        window,
        epochs,
        negatives,
        seed,
        workers,
        lr_start,
        lr_end,
        joint_word_training,
        ..EmbedConfig::default()
    };
    let cohort = &cohort.inner;
    py.detach(|| {
        let v = vocab::build_vocab(cohort, min_count, alpha)?;
        let mut m = embed::init_model(config, v, cohort.patient_ids())?;
        let report = m.train(cohort)?;
        Ok(PyEmbeddingModel {
            inner: m,
            losses: report.epoch_mean_loss,
        })
    })
    .py_err()
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    embed::cosine_similarity(&a, &b).py_err()
}

/// A fitted ridge or boosted-tree model.
#[pyclass(name = "Model", module = "claimvec", frozen)]
struct PyModel {
    inner: FittedModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.col_names().to_vec()
    }

    /// Ridge penalty, `None` for boosted trees.
    #[getter]
    fn lambda_(&self) -> Option<f64> {
        match &self.inner {
            FittedModel::Ridge(r) => Some(r.lambda),
            FittedModel::Gbt(_) => None,
        }
    }

    /// Training MSE after each boosting round, `None` for ridge.
    #[getter]
    fn train_mse(&self) -> Option<Vec<f64>> {
        match &self.inner {
            FittedModel::Gbt(g) => Some(g.train_mse.clone()),
            FittedModel::Ridge(_) => None,
        }
    }

    /// Columns are matched by name when `columns` is given, else by position.
    #[pyo3(signature = (x, columns=None))]
    fn predict(&self, x: Vec<Vec<f64>>, columns: Option<Vec<String>>) -> PyResult<Vec<f64>> {
        let cols = columns.unwrap_or_else(|| self.inner.col_names().to_vec());
        self.inner.predict(&design(x, Some(cols))?).py_err()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: FittedModel::from_json(text).py_err()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py_err()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: FittedModel::load(path).py_err()?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Model({}, {} columns)", self.kind(), self.inner.col_names().len())
    }
}

/// Ridge on standardized columns; `lam=None` picks the penalty by k-fold CV.
#[pyfunction]
#[pyo3(signature = (x, y, columns=None, lam=None, k_folds=5, seed=1))]
fn fit_ridge(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    columns: Option<Vec<String>>,
    lam: Option<f64>,
    k_folds: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let x = design(x, columns)?;
    let model = py.detach(|| {
        let lambda = match lam {
            Some(l) => l,
            None => {
                models::cv_select_lambda(&x, &y, &models::default_lambda_grid(), k_folds, seed, RidgeOptions::default())?
                    .best_lambda
            }
        };
        models::fit_ridge(&x, &y, lambda)
    });
    Ok(PyModel {
        inner: FittedModel::Ridge(model.py_err()?),
    })
}

#[pyfunction]
#[pyo3(signature = (x, y, columns=None, max_depth=6, n_rounds=200, learning_rate=0.1, min_samples_leaf=20, n_bins=256))]
#[allow(clippy::too_many_arguments)]
fn fit_gbt(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    columns: Option<Vec<String>>,
    max_depth: usize,
    n_rounds: usize,
    learning_rate: f64,
    min_samples_leaf: usize,
    n_bins: usize,
) -> PyResult<PyModel> {
    let x = design(x, columns)?;
    let params = GbtParams {
        max_depth,
        n_rounds,
        learning_rate,
        min_samples_leaf,
        n_bins,
    };
    let model = py.detach(|| models::fit_gbt(&x, &y, &params)).py_err()?;
    Ok(PyModel {
        inner: FittedModel::Gbt(model),
    })
}

#[pyfunction]
fn r_squared(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    eval::r_squared(&y, &yhat).py_err()
}

#[pyfunction]
fn mae(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    eval::mae(&y, &yhat).py_err()
}

/// Ratios per populated (sex, age band) cell:
/// `[(sex, band label, n, pr or None), ...]`.
#[pyfunction]
fn predictive_ratios(
    predicted: Vec<f64>,
    actual: Vec<f64>,
    sexes: Vec<String>,
    ages: Vec<i32>,
) -> PyResult<Vec<(String, String, usize, Option<f64>)>> {
    if sexes.len() != ages.len() {
        return Err(PyValueError::new_err("sexes and ages differ in length"));
    }
    let groups = sexes
        .iter()
        .zip(&ages)
        .map(|(s, &a)| Ok(Group::new(s.parse::<Sex>().map_err(PyValueError::new_err)?, a)))
        .collect::<PyResult<Vec<_>>>()?;
    let cells = eval::predictive_ratios(&predicted, &actual, &groups).py_err()?;
    Ok(cells
        .into_iter()
        .map(|c| (c.group.sex.as_str().to_string(), c.group.band.label(), c.n, c.pr))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (ids, fraction=0.7, seed=1))]
fn split_train_test(ids: Vec<String>, fraction: f64, seed: u64) -> PyResult<(Vec<String>, Vec<String>)> {
    features::split_train_test(&ids, fraction, seed).py_err()
}

/// Runs every stage for a config file; returns the four evaluation reports.
#[pyfunction]
#[pyo3(signature = (config, workdir=None, seed=None, workers=None))]
fn run_pipeline(
    py: Python<'_>,
    config: PathBuf,
    workdir: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<Vec<Py<PyAny>>> {
    let mut cfg = PipelineConfig::from_json_file(&config).py_err()?;
    cfg.apply_overrides(seed, workers, workdir);
    let reports = py.detach(|| Pipeline::new(cfg)?.run()).py_err()?;
    reports
        .iter()
        .map(|r| json_to_py(py, &r.to_json().py_err()?))
        .collect()
}

/// Hash-verified reports of a completed run.
#[pyfunction]
fn load_reports(py: Python<'_>, workdir: PathBuf) -> PyResult<Vec<Py<PyAny>>> {
    pipeline::load_reports(&workdir)
        .py_err()?
        .iter()
        .map(|r| json_to_py(py, &r.to_json().py_err()?))
        .collect()
}

#[pymodule]
#[pyo3(name = "claimvec")]
fn claimvec_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCohort>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyEmbeddingModel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(build_vocab, m)?)?;
    m.add_function(wrap_pyfunction!(train_embedding, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gbt, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(predictive_ratios, m)?)?;
    m.add_function(wrap_pyfunction!(split_train_test, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(load_reports, m)?)?;
    Ok(())
}
