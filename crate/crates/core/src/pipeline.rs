//! Stage-by-stage execution of the experiment over a work directory.
//!
//! Every stage reads its inputs from the work directory, writes its outputs
//! with write-then-rename, and records a SHA-256 for each file in
//! `manifest.json`. Reading an artifact whose bytes no longer match the
//! manifest is an error.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bands::Group;
use crate::claims::{build_cohort, parse_claims, parse_members, Cohort};
use crate::embed::{
    export_vectors, init_model, model_from_bytes, model_to_bytes, EmbedConfig, EmbeddingModel,
};
use crate::error::{Error, Result};
use crate::eval::{
    embedding_columns, evaluate, render_text, run_grid, CvSettings, EvalSet, EvaluationReport,
    GridPoint, GridResult,
};
use crate::features::{
    compute_risk_labels, extract_features, read_labels, split_train_test, write_labels, CodeSetMap,
    RiskLabel, FEATURE_NAMES,
};
use crate::models::{
    cv_select_lambda, fit_gbt, fit_ridge, DesignMatrix, FittedModel, GbtParams, RidgeOptions,
};
use crate::vocab::{build_vocab, Vocabulary};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_SCHEMA: &str = "claimvec-manifest/1";

/// Report names in rendering order: representation × learner.
pub const REPORT_NAMES: [&str; 4] = [
    "baseline1_ridge",
    "baseline1_gbt",
    "embedding_ridge",
    "embedding_gbt",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSettings {
    pub claims: PathBuf,
    pub members: PathBuf,
    /// Bundled demo map when absent.
    #[serde(default)]
    pub code_map: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSettings {
    pub base_year: i32,
    pub target_year: i32,
}

impl Default for CohortSettings {
    fn default() -> Self {
        CohortSettings {
            base_year: 2015,
            target_year: 2016,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSettings {
    /// Annualized-cost cap in dollars applied before normalization.
    pub cost_cap: Option<f64>,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for LabelSettings {
    fn default() -> Self {
        LabelSettings {
            cost_cap: None,
            train_fraction: 0.7,
            split_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSettings {
    pub min_count: u64,
    pub alpha: f64,
}

impl Default for VocabSettings {
    fn default() -> Self {
        VocabSettings {
            min_count: 1,
            alpha: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub enabled: bool,
    pub models: Vec<crate::embed::ModelKind>,
    pub dims: Vec<usize>,
    pub windows: Vec<usize>,
}

impl Default for GridSettings {
    fn default() -> Self {
        use crate::embed::ModelKind;
        GridSettings {
            enabled: false,
            models: vec![ModelKind::PvDbow, ModelKind::PvDm],
            dims: vec![100, 200, 300],
            windows: vec![10, 15, 20],
        }
    }
}

impl GridSettings {
    pub fn points(&self) -> Vec<GridPoint> {
        GridPoint::product(&self.models, &self.dims, &self.windows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeSettings {
    /// Fixed penalty; chosen by cross-validation over `cv.lambda_grid` when absent.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrPopulation {
    /// Every cohort member, train and test.
    #[default]
    All,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSettings {
    /// Train document vectors on the training split only and infer test vectors.
    pub holdout_infer: bool,
    pub infer_epochs: usize,
    pub infer_lr: f64,
    pub pr_population: PrPopulation,
}

impl Default for ModeSettings {
    fn default() -> Self {
        ModeSettings {
            holdout_infer: false,
            infer_epochs: 20,
            infer_lr: 0.025,
            pr_population: PrPopulation::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathSettings,
    #[serde(default)]
    pub cohort: CohortSettings,
    #[serde(default)]
    pub labels: LabelSettings,
    #[serde(default)]
    pub vocab: VocabSettings,
    #[serde(default)]
    pub embed: EmbedConfig,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub cv: CvSettings,
    #[serde(default)]
    pub ridge: RidgeSettings,
    #[serde(default)]
    pub gbt: GbtParams,
    #[serde(default)]
    pub mode: ModeSettings,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.paths.claims);
        resolve(base, &mut config.paths.members);
        resolve(base, &mut config.paths.workdir);
        if let Some(m) = config.paths.code_map.as_mut() {
            resolve(base, m);
        }
        Ok(config)
    }

    /// `seed` replaces every seed in the config.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        workers: Option<usize>,
        workdir: Option<PathBuf>,
    ) {
        if let Some(s) = seed {
            self.embed.seed = s;
            self.labels.split_seed = s;
            self.cv.seed = s;
        }
        if let Some(w) = workers {
            self.embed.workers = w;
        }
        if let Some(d) = workdir {
            self.paths.workdir = d;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![&self.paths.claims, &self.paths.members];
        inputs.extend(self.paths.code_map.as_ref());
        for p in inputs {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    p.display()
                )));
            }
        }
        if self.cohort.target_year <= self.cohort.base_year {
            return Err(Error::Config("target_year must follow base_year".into()));
        }
        if !(self.labels.train_fraction > 0.0 && self.labels.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if let Some(cap) = self.labels.cost_cap {
            if !(cap > 0.0) {
                return Err(Error::Config("cost_cap must be > 0".into()));
            }
        }
        self.embed.validate()?;
        self.gbt.validate()?;
        if self.grid.enabled && self.grid.points().is_empty() {
            return Err(Error::Config("grid is enabled but has no points".into()));
        }
        if self.cv.k_folds < 2 || self.cv.lambda_grid.is_empty() {
            return Err(Error::Config(
                "cv needs k_folds >= 2 and a non-empty lambda grid".into(),
            ));
        }
        if let Some(l) = self.ridge.lambda {
            if !(l >= 0.0) {
                return Err(Error::Config("ridge lambda must be >= 0".into()));
            }
        }
        if self.mode.holdout_infer && !(self.mode.infer_lr > 0.0) {
            return Err(Error::Config("infer_lr must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    /// Completed stages, in completion order.
    pub stages: Vec<String>,
    /// Path relative to the work directory → SHA-256 hex.
    pub artifacts: BTreeMap<String, String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            stages: Vec::new(),
            artifacts: BTreeMap::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Manifest {
    pub fn load(workdir: &Path) -> Result<Manifest> {
        let path = workdir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Data(format!(
                    "no manifest at {}; run the pipeline first",
                    path.display()
                ))
            } else {
                Error::io(&path, e)
            }
        })?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::VersionMismatch {
                found: m.schema,
                expected: MANIFEST_SCHEMA.to_string(),
            });
        }
        Ok(m)
    }

    fn load_or_default(workdir: &Path) -> Result<Manifest> {
        if workdir.join(MANIFEST_FILE).exists() {
            Manifest::load(workdir)
        } else {
            Ok(Manifest::default())
        }
    }

    fn save(&self, workdir: &Path) -> Result<()> {
        write_atomic(
            &workdir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(self)?.as_bytes(),
        )
    }

    /// Re-hashes one artifact against its recorded digest.
    pub fn read_verified(&self, workdir: &Path, rel: &str) -> Result<Vec<u8>> {
        let expected = self.artifacts.get(rel).ok_or_else(|| {
            Error::Data(format!(
                "artifact `{rel}` is not in the manifest; run its stage first"
            ))
        })?;
        let path = workdir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(&bytes);
        if &found != expected {
            return Err(Error::Corrupt(format!(
                "{} hash {found} does not match manifest {expected}",
                path.display()
            )));
        }
        Ok(bytes)
    }

    pub fn verify_all(&self, workdir: &Path) -> Result<()> {
        for rel in self.artifacts.keys() {
            self.read_verified(workdir, rel)?;
        }
        Ok(())
    }
}

fn write_matrix_csv(ids: &[String], x: &DesignMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["patient_id".to_string()];
    header.extend(x.col_names().iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<matrix>", e.into_error()))
}

fn read_matrix_csv(bytes: &[u8]) -> Result<(Vec<String>, DesignMatrix)> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        for (j, field) in rec.iter().skip(1).enumerate() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::parse(line as u64 + 2, &cols[j], e.to_string()))?,
            );
        }
    }
    Ok((ids, DesignMatrix::new(cols, values)?))
}

#[derive(Serialize, Deserialize)]
struct Split {
    train_fraction: f64,
    seed: u64,
    train: Vec<String>,
    test: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EmbedSummary {
    config: EmbedConfig,
    trained_on: String,
    n_documents: usize,
    vocab_size: usize,
    report: crate::embed::TrainReport,
}

fn row_indices(all: &[String], subset: &[String]) -> Result<Vec<usize>> {
    let pos: HashMap<&str, usize> = all
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    subset
        .iter()
        .map(|id| {
            pos.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("patient `{id}` has no feature row")))
        })
        .collect()
}

fn infer_seed(base: u64, row: usize) -> u64 {
    base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(row as u64 + 1))
}

pub struct Pipeline {
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let wd = &config.paths.workdir;
        std::fs::create_dir_all(wd).map_err(|e| Error::io(wd, e))?;
        Ok(Pipeline { config })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn workdir(&self) -> &Path {
        &self.config.paths.workdir
    }

    fn stage<T>(
        &self,
        name: &'static str,
        f: impl FnOnce(&mut Manifest) -> Result<T>,
    ) -> Result<T> {
        let wrap = |e: Error| Error::Stage {
            stage: name,
            source: Box::new(e),
        };
        log::info!("stage {name}");
        let mut m = Manifest::load_or_default(self.workdir()).map_err(wrap)?;
        let out = f(&mut m).map_err(wrap)?;
        m.stages.retain(|s| s != name);
        m.stages.push(name.to_string());
        m.save(self.workdir()).map_err(wrap)?;
        Ok(out)
    }

    fn put(&self, m: &mut Manifest, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.workdir().join(rel), bytes)?;
        m.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        m.save(self.workdir())
    }

    fn code_map(&self) -> Result<CodeSetMap> {
        match &self.config.paths.code_map {
            Some(p) => CodeSetMap::from_json_file(p),
            None => Ok(CodeSetMap::demo()),
        }
    }

    fn load_cohort(&self, m: &Manifest) -> Result<Cohort> {
        Cohort::read_jsonl(&m.read_verified(self.workdir(), "cohort.jsonl")?[..])
    }

    fn load_labels(&self, m: &Manifest) -> Result<Vec<RiskLabel>> {
        read_labels(&m.read_verified(self.workdir(), "labels.csv")?[..])
    }

    fn load_split(&self, m: &Manifest) -> Result<Split> {
        Ok(serde_json::from_slice(
            &m.read_verified(self.workdir(), "split.json")?,
        )?)
    }

    fn embedding_cohort(&self, m: &Manifest, cohort: Cohort) -> Result<Cohort> {
        if self.config.mode.holdout_infer {
            Ok(cohort.subset(&self.load_split(m)?.train))
        } else {
            Ok(cohort)
        }
    }

    pub fn stage_cohort(&self) -> Result<Cohort> {
        self.stage("cohort", |m| {
            let claims = parse_claims(&self.config.paths.claims)?;
            let members = parse_members(&self.config.paths.members)?;
            let c = &self.config.cohort;
            let cohort = build_cohort(&claims, &members, c.base_year, c.target_year)?;
            if cohort.len() < 2 {
                return Err(Error::Data(format!("cohort has {} patients", cohort.len())));
            }
            log::info!("cohort: {} of {} members", cohort.len(), members.len());
            let mut buf = Vec::new();
            cohort.write_jsonl(&mut buf)?;
            self.put(m, "cohort.jsonl", &buf)?;
            Ok(cohort)
        })
    }

    pub fn stage_label(&self) -> Result<Vec<RiskLabel>> {
        self.stage("label", |m| {
            let cohort = self.load_cohort(m)?;
            let l = &self.config.labels;
            let labels = compute_risk_labels(&cohort, cohort.target_year, l.cost_cap)?;
            let mut buf = Vec::new();
            write_labels(&mut buf, &labels)?;
            self.put(m, "labels.csv", &buf)?;
            let (train, test) =
                split_train_test(&cohort.patient_ids(), l.train_fraction, l.split_seed)?;
            let split = Split {
                train_fraction: l.train_fraction,
                seed: l.split_seed,
                train,
                test,
            };
            self.put(m, "split.json", &serde_json::to_vec_pretty(&split)?)?;
            Ok(labels)
        })
    }

    pub fn stage_grid(&self) -> Result<GridResult> {
        self.stage("grid", |m| {
            let cohort = self.load_cohort(m)?;
            let labels = self.load_labels(m)?;
            let split = self.load_split(m)?;
            let cohort = self.embedding_cohort(m, cohort)?;
            let vocab = build_vocab(
                &cohort,
                self.config.vocab.min_count,
                self.config.vocab.alpha,
            )?;
            let scores: HashMap<&str, f64> = labels
                .iter()
                .map(|l| (l.patient_id.as_str(), l.risk_score))
                .collect();
            let result = run_grid(
                &cohort,
                &vocab,
                &scores,
                &self.config.grid.points(),
                &split.train,
                &self.config.embed,
                &self.config.cv,
            )?;
            if result.best.is_none() {
                return Err(Error::Data("every grid entry failed".into()));
            }
            self.put(m, "grid.json", &serde_json::to_vec_pretty(&result)?)?;
            Ok(result)
        })
    }

    /// Embedding settings after applying the grid winner, when enabled.
    pub fn selected_embed_config(&self) -> Result<EmbedConfig> {
        let mut cfg = self.config.embed.clone();
        if self.config.grid.enabled {
            let m = Manifest::load(self.workdir())?;
            let grid: GridResult =
                serde_json::from_slice(&m.read_verified(self.workdir(), "grid.json")?)?;
            let best = grid
                .best
                .ok_or_else(|| Error::Data("grid has no successful entry".into()))?;
            cfg.model = best.point.model;
            cfg.dim = best.point.dim;
            cfg.window = best.point.window;
        }
        Ok(cfg)
    }

    pub fn stage_embed(&self) -> Result<EmbeddingModel> {
        let cfg = self.selected_embed_config().map_err(|e| Error::Stage {
            stage: "embed",
            source: Box::new(e),
        })?;
        self.stage("embed", |m| {
            let cohort = self.embedding_cohort(m, self.load_cohort(m)?)?;
            let vocab = build_vocab(
                &cohort,
                self.config.vocab.min_count,
                self.config.vocab.alpha,
            )?;
            let mut vbuf = Vec::new();
            vocab.write_text(&mut vbuf)?;
            self.put(m, "vocab.txt", &vbuf)?;
            let mut model = init_model(cfg.clone(), vocab.clone(), cohort.patient_ids())?;
            let report = model.train(&cohort)?;
            self.put(m, "embedding.bin", &model_to_bytes(&model)?)?;
            let mut vectors = Vec::new();
            export_vectors(&model, &mut vectors, true)?;
            self.put(m, "vectors.txt", &vectors)?;
            let summary = EmbedSummary {
                config: cfg,
                trained_on: if self.config.mode.holdout_infer {
                    "train"
                } else {
                    "all"
                }
                .into(),
                n_documents: cohort.len(),
                vocab_size: vocab.len(),
                report,
            };
            self.put(m, "embed.json", &serde_json::to_vec_pretty(&summary)?)?;
            Ok(model)
        })
    }

    pub fn stage_featurize(&self) -> Result<()> {
        self.stage("featurize", |m| {
            let cohort = self.load_cohort(m)?;
            let ids = cohort.patient_ids();
            let rows = extract_features(&cohort, &self.code_map()?)?;
            let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
            let baseline = DesignMatrix::new(names, rows.iter().flat_map(|r| r.values).collect())?;
            self.put(
                m,
                "features/baseline1.csv",
                &write_matrix_csv(&ids, &baseline)?,
            )?;

            let model = model_from_bytes(&m.read_verified(self.workdir(), "embedding.bin")?)?;
            let mode = &self.config.mode;
            let mut values = Vec::with_capacity(ids.len() * model.dim());
            for (i, doc) in cohort.documents.iter().enumerate() {
                if let Some(v) = model.doc_vector(&doc.patient_id) {
                    values.extend_from_slice(v);
                    continue;
                }
                let seed = infer_seed(model.config().seed, i);
                match model.infer_doc_vector(&doc.tokens, mode.infer_epochs, mode.infer_lr, seed) {
                    Ok(v) => values.extend(v),
                    Err(Error::Data(msg)) if msg.contains("no in-vocabulary") => {
                        log::warn!(
                            "patient {} has no known codes; using a zero vector",
                            doc.patient_id
                        );
                        values.extend(std::iter::repeat_n(0.0, model.dim()));
                    }
                    Err(e) => return Err(e),
                }
            }
            let emb = DesignMatrix::new(embedding_columns(model.dim()), values)?;
            self.put(m, "features/embedding.csv", &write_matrix_csv(&ids, &emb)?)?;
            Ok(())
        })
    }

    fn training_data(
        &self,
        m: &Manifest,
        rep: &str,
    ) -> Result<(Vec<String>, DesignMatrix, HashMap<String, f64>)> {
        let (ids, x) =
            read_matrix_csv(&m.read_verified(self.workdir(), &format!("features/{rep}.csv"))?)?;
        let scores = self
            .load_labels(m)?
            .into_iter()
            .map(|l| (l.patient_id, l.risk_score))
            .collect();
        Ok((ids, x, scores))
    }

    fn targets(ids: &[String], scores: &HashMap<String, f64>) -> Result<Vec<f64>> {
        ids.iter()
            .map(|id| {
                scores
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("no label for patient `{id}`")))
            })
            .collect()
    }

    pub fn stage_fit(&self) -> Result<Vec<FittedModel>> {
        self.stage("fit", |m| {
            let split = self.load_split(m)?;
            let mut fitted = Vec::new();
            for rep in ["baseline1", "embedding"] {
                let (ids, x, scores) = self.training_data(m, rep)?;
                let rows = row_indices(&ids, &split.train)?;
                let xt = x.select_rows(&rows)?;
                let yt = Self::targets(&split.train, &scores)?;
                let lambda = match self.config.ridge.lambda {
                    Some(l) => l,
                    None => {
                        let cv = &self.config.cv;
                        let res = cv_select_lambda(
                            &xt,
                            &yt,
                            &cv.lambda_grid,
                            cv.k_folds,
                            cv.seed,
                            RidgeOptions::default(),
                        )?;
                        self.put(
                            m,
                            &format!("models/cv_{rep}.json"),
                            &serde_json::to_vec_pretty(&res)?,
                        )?;
                        res.best_lambda
                    }
                };
                let ridge = FittedModel::Ridge(fit_ridge(&xt, &yt, lambda)?);
                self.put(
                    m,
                    &format!("models/{rep}_ridge.json"),
                    ridge.to_json()?.as_bytes(),
                )?;
                let gbt = FittedModel::Gbt(fit_gbt(&xt, &yt, &self.config.gbt)?);
                self.put(
                    m,
                    &format!("models/{rep}_gbt.json"),
                    gbt.to_json()?.as_bytes(),
                )?;
                fitted.push(ridge);
                fitted.push(gbt);
            }
            Ok(fitted)
        })
    }

    fn config_echo(
        &self,
        rep: &str,
        model: &FittedModel,
        embed: &EmbedConfig,
    ) -> serde_json::Value {
        let learner = match model {
            FittedModel::Ridge(r) => serde_json::json!({"learner": "ridge", "lambda": r.lambda}),
            FittedModel::Gbt(g) => serde_json::json!({"learner": "gbt", "params": g.params}),
        };
        serde_json::json!({
            "representation": rep,
            "model": learner,
            "embedding": if rep == "embedding" { serde_json::to_value(embed).ok() } else { None },
            "labels": self.config.labels,
            "cohort": self.config.cohort,
            "holdout_infer": self.config.mode.holdout_infer,
        })
    }

    pub fn stage_evaluate(&self) -> Result<Vec<EvaluationReport>> {
        self.stage("evaluate", |m| {
            let cohort = self.load_cohort(m)?;
            let split = self.load_split(m)?;
            let base_year = cohort.base_year;
            let groups: HashMap<&str, Group> = cohort
                .documents
                .iter()
                .map(|d| {
                    (
                        d.patient_id.as_str(),
                        Group::new(d.member.sex, d.member.age_in(base_year)),
                    )
                })
                .collect();
            let summary: EmbedSummary =
                serde_json::from_slice(&m.read_verified(self.workdir(), "embed.json")?)?;
            let mut reports = Vec::new();
            let mut pred_columns: Vec<Vec<f64>> = Vec::new();
            let mut all_ids = Vec::new();
            let mut all_y = Vec::new();
            for name in REPORT_NAMES {
                let rep = name
                    .rsplit_once('_')
                    .expect("report names are rep_learner")
                    .0;
                let (ids, x, scores) = self.training_data(m, rep)?;
                let model = FittedModel::from_json(
                    std::str::from_utf8(
                        &m.read_verified(self.workdir(), &format!("models/{name}.json"))?,
                    )
                    .map_err(|e| Error::Corrupt(e.to_string()))?,
                )?;
                let test_rows = row_indices(&ids, &split.test)?;
                let xt = x.select_rows(&test_rows)?;
                let yt = Self::targets(&split.test, &scores)?;
                let gt: Vec<Group> = split.test.iter().map(|id| groups[id.as_str()]).collect();
                let y_all = Self::targets(&ids, &scores)?;
                let g_all: Vec<Group> = ids
                    .iter()
                    .map(|id| {
                        groups.get(id.as_str()).copied().ok_or_else(|| {
                            Error::Data(format!("patient `{id}` is not in the cohort"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let pr_set = match self.config.mode.pr_population {
                    PrPopulation::All => Some(EvalSet {
                        x: &x,
                        actual: &y_all,
                        groups: &g_all,
                    }),
                    PrPopulation::Test => None,
                };
                let echo = self.config_echo(rep, &model, &summary.config);
                let report = evaluate(
                    name,
                    &model,
                    EvalSet {
                        x: &xt,
                        actual: &yt,
                        groups: &gt,
                    },
                    pr_set,
                    echo,
                )?;
                self.put(
                    m,
                    &format!("reports/{name}.json"),
                    report.to_json()?.as_bytes(),
                )?;
                pred_columns.push(model.predict(&x)?);
                if all_ids.is_empty() {
                    all_ids = ids;
                    all_y = y_all;
                } else if all_ids != ids {
                    return Err(Error::Data(
                        "feature files list patients in different orders".into(),
                    ));
                }
                reports.push(report);
            }
            let test: std::collections::HashSet<&str> =
                split.test.iter().map(String::as_str).collect();
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["patient_id", "split", "risk_score"];
            header.extend(REPORT_NAMES);
            w.write_record(&header)?;
            for (i, id) in all_ids.iter().enumerate() {
                let mut rec = vec![
                    id.clone(),
                    if test.contains(id.as_str()) {
                        "test"
                    } else {
                        "train"
                    }
                    .to_string(),
                    all_y[i].to_string(),
                ];
                rec.extend(pred_columns.iter().map(|c| c[i].to_string()));
                w.write_record(&rec)?;
            }
            let preds = w
                .into_inner()
                .map_err(|e| Error::io("<predictions>", e.into_error()))?;
            self.put(m, "predictions.csv", &preds)?;
            self.put(m, "reports/summary.txt", render_text(&reports).as_bytes())?;
            Ok(reports)
        })
    }

    /// Every stage in order; the grid runs only when enabled.
    pub fn run(&self) -> Result<Vec<EvaluationReport>> {
        self.stage_cohort()?;
        self.stage_label()?;
        if self.config.grid.enabled {
            self.stage_grid()?;
        }
        self.stage_embed()?;
        self.stage_featurize()?;
        self.stage_fit()?;
        self.stage_evaluate()
    }
}

/// The four evaluation reports of a completed run, after re-hashing every
/// artifact in the manifest.
pub fn load_reports(workdir: impl AsRef<Path>) -> Result<Vec<EvaluationReport>> {
    let workdir = workdir.as_ref();
    let m = Manifest::load(workdir)?;
    m.verify_all(workdir)?;
    REPORT_NAMES
        .iter()
        .map(|name| {
            let bytes = m.read_verified(workdir, &format!("reports/{name}.json"))?;
            EvaluationReport::from_json(
                std::str::from_utf8(&bytes).map_err(|e| Error::Corrupt(e.to_string()))?,
            )
        })
        .collect()
}

/// Embedding vocabulary persisted by the embed stage.
pub fn load_vocab(workdir: impl AsRef<Path>) -> Result<Vocabulary> {
    let workdir = workdir.as_ref();
    let m = Manifest::load(workdir)?;
    Vocabulary::read_text(&m.read_verified(workdir, "vocab.txt")?[..])
}
