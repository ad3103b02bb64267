//! Paragraph-vector document embeddings (PV-DBOW and PV-DM) trained with
//! negative-sampling SGD.
//!
//! Documents are patients and words are claim codes. The predictor vector is
//! the document vector alone (PV-DBOW) or the mean of the document vector and
//! the context word vectors in a window around the target (PV-DM). In pure
//! PV-DBOW the `window` setting is unused; it only matters when
//! `joint_word_training` adds skip-gram updates between codes.

mod io;
mod objective;
mod store;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claims::Cohort;
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub use io::{
    export_vectors, load_model, model_from_bytes, model_to_bytes, save_model, MODEL_FORMAT_VERSION,
};
use objective::{dot, sgd_step};
pub use objective::{neg_log_sigmoid, ns_loss_and_grads, sigmoid, NsGradients};
use store::{from_atomic, to_atomic, Frozen, PlainRows, RowStore, SharedRows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "PV_DBOW")]
    PvDbow,
    #[serde(rename = "PV_DM")]
    PvDm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::PvDbow => "PV_DBOW",
            ModelKind::PvDm => "PV_DM",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PV_DBOW" | "pv_dbow" | "dbow" => Ok(ModelKind::PvDbow),
            "PV_DM" | "pv_dm" | "dm" => Ok(ModelKind::PvDm),
            other => Err(Error::Config(format!("unknown embedding model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmCombine {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub workers: usize,
    pub dm_combine: DmCombine,
    pub joint_word_training: bool,
    /// Use the full window at every position instead of `b ~ U{1..window}`.
    pub fixed_window: bool,
    /// Frequent-token subsampling threshold; off when `None`.
    pub subsample: Option<f64>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            model: ModelKind::PvDbow,
            dim: 100,
            window: 15,
            negatives: 5,
            epochs: 10,
            lr_start: 0.025,
            lr_end: 1e-4,
            seed: 1,
            workers: 1,
            dm_combine: DmCombine::Mean,
            joint_word_training: false,
            fixed_window: false,
            subsample: None,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim < 1 {
            return fail("dim must be >= 1");
        }
        if self.window < 1 {
            return fail("window must be >= 1");
        }
        if self.negatives < 1 {
            return fail("negatives must be >= 1");
        }
        if self.workers < 1 {
            return fail("workers must be >= 1");
        }
        if !(self.lr_end >= 0.0) || !(self.lr_end <= self.lr_start) || !self.lr_start.is_finite() {
            return fail("learning rates need 0 <= lr_end <= lr_start");
        }
        if let Some(t) = self.subsample {
            if !(t > 0.0) {
                return fail("subsample threshold must be > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    config: EmbedConfig,
    vocab: Vocabulary,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    doc_vectors: Vec<f64>,
    word_in: Vec<f64>,
    word_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean negative-sampling loss per prediction, one entry per epoch.
    pub epoch_mean_loss: Vec<f64>,
    pub examples: u64,
    /// Documents with no in-vocabulary token.
    pub skipped_documents: usize,
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    let half = 0.5 / dim as f64;
    (0..n * dim)
        .map(|_| rng.random_range(-half..=half))
        .collect()
}

/// Fresh model: document and input word vectors uniform in `±0.5/dim`,
/// output vectors zero. Deterministic in `config.seed`.
pub fn init_model(
    config: EmbedConfig,
    vocab: Vocabulary,
    doc_ids: Vec<String>,
) -> Result<EmbeddingModel> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_count: vocab.min_count(),
        });
    }
    let mut doc_index = HashMap::with_capacity(doc_ids.len());
    for (i, id) in doc_ids.iter().enumerate() {
        if doc_index.insert(id.clone(), i).is_some() {
            return Err(Error::Data(format!("duplicate document id `{id}`")));
        }
    }
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let doc_vectors = uniform_init(&mut rng, doc_ids.len(), dim);
    let word_in = uniform_init(&mut rng, vocab.len(), dim);
    let word_out = vec![0.0; vocab.len() * dim];
    Ok(EmbeddingModel {
        config,
        vocab,
        doc_ids,
        doc_index,
        doc_vectors,
        word_in,
        word_out,
    })
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Per-thread scratch state for the SGD loop.
struct Worker<'a> {
    cfg: &'a EmbedConfig,
    vocab: &'a Vocabulary,
    rng: ChaCha8Rng,
    center: Vec<f64>,
    grad: Vec<f64>,
    buf: Vec<f64>,
    negs: Vec<usize>,
    ctx: Vec<usize>,
    kept: Vec<u32>,
    fixed_window: bool,
    doc_only: bool,
}

struct Schedule<'a> {
    lr_start: f64,
    lr_end: f64,
    planned: u64,
    processed: &'a AtomicU64,
}

impl Schedule<'_> {
    fn tick(&self) -> f64 {
        let done = self.processed.fetch_add(1, Ordering::Relaxed);
        let frac = if self.planned == 0 {
            1.0
        } else {
            (done as f64 / self.planned as f64).min(1.0)
        };
        self.lr_start - (self.lr_start - self.lr_end) * frac
    }
}

impl<'a> Worker<'a> {
    fn new(cfg: &'a EmbedConfig, vocab: &'a Vocabulary, rng: ChaCha8Rng) -> Self {
        let dim = cfg.dim;
        Worker {
            cfg,
            vocab,
            rng,
            center: vec![0.0; dim],
            grad: vec![0.0; dim],
            buf: vec![0.0; dim],
            negs: Vec::with_capacity(cfg.negatives),
            ctx: Vec::new(),
            kept: Vec::new(),
            fixed_window: cfg.fixed_window,
            doc_only: false,
        }
    }

    fn draw_negatives(&mut self, target: usize) {
        self.negs.clear();
        for _ in 0..self.cfg.negatives {
            // V >= 2 is checked before training starts.
            let id = crate::vocab::sample_negative(self.vocab, &mut self.rng, Some(target))
                .expect("vocabulary has at least two tokens");
            self.negs.push(id);
        }
    }

    fn half_window(&mut self) -> usize {
        if self.fixed_window {
            self.cfg.window
        } else {
            self.rng.random_range(1..=self.cfg.window)
        }
    }

    fn fill_context(&mut self, t: usize, len: usize) {
        let b = self.half_window();
        self.ctx.clear();
        let lo = t.saturating_sub(b);
        let hi = (t + b).min(len - 1);
        self.ctx.extend((lo..=hi).filter(|&p| p != t));
    }

    /// One pass over a document; returns (loss sum, prediction count).
    fn document<D: RowStore, W: RowStore, O: RowStore>(
        &mut self,
        doc_row: usize,
        tokens: &[u32],
        docs: &mut D,
        word_in: &mut W,
        word_out: &mut O,
        schedule: &Schedule<'_>,
    ) -> (f64, u64) {
        let mut kept = std::mem::take(&mut self.kept);
        kept.clear();
        match self.cfg.subsample {
            Some(t) => {
                for &tok in tokens {
                    if self.rng.random::<f64>() < self.vocab.keep_probability(tok as usize, t) {
                        kept.push(tok);
                    }
                }
            }
            None => kept.extend_from_slice(tokens),
        }
        let mut loss = 0.0;
        let mut n = 0u64;
        // skipped tokens still advance the schedule
        for _ in kept.len()..tokens.len() {
            schedule.tick();
        }
        for t in 0..kept.len() {
            let lr = schedule.tick();
            let target = kept[t] as usize;
            match self.cfg.model {
                ModelKind::PvDbow => {
                    loss += self.dbow_step(doc_row, target, docs, word_out, lr);
                    n += 1;
                    if self.cfg.joint_word_training && !self.doc_only {
                        self.fill_context(t, kept.len());
                        let ctx = std::mem::take(&mut self.ctx);
                        for &p in &ctx {
                            loss +=
                                self.skipgram_step(target, kept[p] as usize, word_in, word_out, lr);
                            n += 1;
                        }
                        self.ctx = ctx;
                    }
                }
                ModelKind::PvDm => {
                    self.fill_context(t, kept.len());
                    loss += self.dm_step(doc_row, target, &kept, docs, word_in, word_out, lr);
                    n += 1;
                }
            }
        }
        self.kept = kept;
        (loss, n)
    }

    fn dbow_step<D: RowStore, O: RowStore>(
        &mut self,
        doc_row: usize,
        target: usize,
        docs: &mut D,
        word_out: &mut O,
        lr: f64,
    ) -> f64 {
        self.draw_negatives(target);
        docs.read(doc_row, &mut self.center);
        self.grad.fill(0.0);
        let loss = sgd_step(
            &self.center,
            target,
            &self.negs,
            word_out,
            lr,
            &mut self.grad,
            &mut self.buf,
        );
        docs.axpy(doc_row, -lr, &self.grad);
        loss
    }

    fn skipgram_step<W: RowStore, O: RowStore>(
        &mut self,
        center_tok: usize,
        target: usize,
        word_in: &mut W,
        word_out: &mut O,
        lr: f64,
    ) -> f64 {
        self.draw_negatives(target);
        word_in.read(center_tok, &mut self.center);
        self.grad.fill(0.0);
        let loss = sgd_step(
            &self.center,
            target,
            &self.negs,
            word_out,
            lr,
            &mut self.grad,
            &mut self.buf,
        );
        word_in.axpy(center_tok, -lr, &self.grad);
        loss
    }

    #[allow(clippy::too_many_arguments)]
    fn dm_step<D: RowStore, W: RowStore, O: RowStore>(
        &mut self,
        doc_row: usize,
        target: usize,
        tokens: &[u32],
        docs: &mut D,
        word_in: &mut W,
        word_out: &mut O,
        lr: f64,
    ) -> f64 {
        self.draw_negatives(target);
        docs.read(doc_row, &mut self.center);
        for &p in &self.ctx {
            word_in.read(tokens[p] as usize, &mut self.buf);
            for (c, b) in self.center.iter_mut().zip(&self.buf) {
                *c += b;
            }
        }
        let count = (1 + self.ctx.len()) as f64;
        for c in self.center.iter_mut() {
            *c /= count;
        }
        self.grad.fill(0.0);
        let loss = sgd_step(
            &self.center,
            target,
            &self.negs,
            word_out,
            lr,
            &mut self.grad,
            &mut self.buf,
        );
        // d(mean)/d(input) = 1/count for every averaged vector
        let scale = -lr / count;
        docs.axpy(doc_row, scale, &self.grad);
        if !self.doc_only {
            for &p in &self.ctx {
                word_in.axpy(tokens[p] as usize, scale, &self.grad);
            }
        }
        loss
    }
}

fn worker_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl EmbeddingModel {
    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_row(&self, patient_id: &str) -> Option<usize> {
        self.doc_index.get(patient_id).copied()
    }

    pub fn doc_vector(&self, patient_id: &str) -> Option<&[f64]> {
        let d = self.config.dim;
        self.doc_row(patient_id)
            .map(|r| &self.doc_vectors[r * d..(r + 1) * d])
    }

    pub fn doc_vectors(&self) -> &[f64] {
        &self.doc_vectors
    }

    pub fn word_in(&self) -> &[f64] {
        &self.word_in
    }

    pub fn word_out(&self) -> &[f64] {
        &self.word_out
    }

    /// Input (context) vector of a code.
    pub fn word_vector(&self, token: &str) -> Option<&[f64]> {
        let d = self.config.dim;
        self.vocab
            .id(token)
            .map(|i| &self.word_in[i * d..(i + 1) * d])
    }

    pub fn is_finite(&self) -> bool {
        self.doc_vectors
            .iter()
            .chain(&self.word_in)
            .chain(&self.word_out)
            .all(|v| v.is_finite())
    }

    /// Trains on the cohort's documents. Every document must have a row in
    /// this model; out-of-vocabulary tokens are skipped.
    pub fn train(&mut self, cohort: &Cohort) -> Result<TrainReport> {
        let mut docs = Vec::with_capacity(cohort.len());
        for d in &cohort.documents {
            let row = self.doc_row(&d.patient_id).ok_or_else(|| {
                Error::Data(format!(
                    "document `{}` has no row in the embedding model",
                    d.patient_id
                ))
            })?;
            docs.push((row, self.vocab.encode(&d.tokens)));
        }
        self.train_encoded(docs)
    }

    fn train_encoded(&mut self, docs: Vec<(usize, Vec<u32>)>) -> Result<TrainReport> {
        if self.vocab.len() < 2 {
            return Err(Error::Data(
                "negative sampling needs a vocabulary of at least two tokens".into(),
            ));
        }
        let total = docs.len();
        let docs: Vec<(usize, Vec<u32>)> =
            docs.into_iter().filter(|(_, t)| !t.is_empty()).collect();
        let skipped = total - docs.len();
        if skipped > 0 {
            log::warn!("skipped {skipped} documents with no in-vocabulary tokens");
        }
        let epochs = self.config.epochs;
        let mut report = TrainReport {
            skipped_documents: skipped,
            ..Default::default()
        };
        if epochs == 0 {
            return Ok(report);
        }
        let tokens_per_epoch: u64 = docs.iter().map(|(_, t)| t.len() as u64).sum();
        let processed = AtomicU64::new(0);
        let schedule = Schedule {
            lr_start: self.config.lr_start,
            lr_end: self.config.lr_end,
            planned: tokens_per_epoch * epochs as u64,
            processed: &processed,
        };
        let dim = self.config.dim;
        let workers = self.config.workers.min(docs.len().max(1));
        let mut loss = vec![0.0; epochs];
        let mut count = vec![0u64; epochs];

        if workers == 1 {
            let cfg = self.config.clone();
            let mut w = Worker::new(&cfg, &self.vocab, worker_rng(cfg.seed, 1));
            let mut dv = PlainRows::new(&mut self.doc_vectors, dim);
            let mut wi = PlainRows::new(&mut self.word_in, dim);
            let mut wo = PlainRows::new(&mut self.word_out, dim);
            for e in 0..epochs {
                for (row, toks) in &docs {
                    let (l, n) = w.document(*row, toks, &mut dv, &mut wi, &mut wo, &schedule);
                    loss[e] += l;
                    count[e] += n;
                }
            }
        } else {
            let dv = to_atomic(&self.doc_vectors);
            let wi = to_atomic(&self.word_in);
            let wo = to_atomic(&self.word_out);
            let cfg = &self.config;
            let vocab = &self.vocab;
            let docs = &docs;
            let schedule = &schedule;
            let per_worker: Vec<(Vec<f64>, Vec<u64>)> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|wid| {
                        let (dv, wi, wo) = (&dv, &wi, &wo);
                        s.spawn(move || {
                            let mut w =
                                Worker::new(cfg, vocab, worker_rng(cfg.seed, 1 + wid as u64));
                            let mut dvs = SharedRows::new(dv, dim);
                            let mut wis = SharedRows::new(wi, dim);
                            let mut wos = SharedRows::new(wo, dim);
                            let mut loss = vec![0.0; epochs];
                            let mut count = vec![0u64; epochs];
                            for e in 0..epochs {
                                for (row, toks) in docs.iter().skip(wid).step_by(workers) {
                                    let (l, n) = w.document(
                                        *row, toks, &mut dvs, &mut wis, &mut wos, schedule,
                                    );
                                    loss[e] += l;
                                    count[e] += n;
                                }
                            }
                            (loss, count)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            });
            for (l, c) in per_worker {
                for e in 0..epochs {
                    loss[e] += l[e];
                    count[e] += c[e];
                }
            }
            self.doc_vectors = from_atomic(dv);
            self.word_in = from_atomic(wi);
            self.word_out = from_atomic(wo);
        }

        if !self.is_finite() {
            return Err(Error::Data(
                "training produced non-finite parameters".into(),
            ));
        }
        report.examples = count.iter().sum();
        report.epoch_mean_loss = loss
            .iter()
            .zip(&count)
            .map(|(l, &c)| if c == 0 { 0.0 } else { l / c as f64 })
            .collect();
        Ok(report)
    }

    /// Seeded starting vector used by [`Self::infer_doc_vector`].
    pub fn inference_init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        uniform_init(&mut rng, 1, self.config.dim)
    }

    /// Fits a vector for an unseen document with all word matrices frozen.
    pub fn infer_doc_vector(
        &self,
        tokens: &[String],
        infer_epochs: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let ids = self.vocab.encode(tokens);
        if ids.is_empty() {
            return Err(Error::Data("document has no in-vocabulary tokens".into()));
        }
        if self.vocab.len() < 2 {
            return Err(Error::Data(
                "negative sampling needs at least two tokens".into(),
            ));
        }
        let dim = self.config.dim;
        let mut vector = self.inference_init(seed);
        if infer_epochs == 0 {
            return Ok(vector);
        }
        let processed = AtomicU64::new(0);
        let schedule = Schedule {
            lr_start: lr,
            lr_end: self.config.lr_end.min(lr),
            planned: (ids.len() * infer_epochs) as u64,
            processed: &processed,
        };
        let mut cfg = self.config.clone();
        cfg.subsample = None;
        let mut w = Worker::new(&cfg, &self.vocab, worker_rng(seed, 1));
        w.doc_only = true;
        let mut dv = PlainRows::new(&mut vector, dim);
        let mut wi = Frozen::new(&self.word_in, dim);
        let mut wo = Frozen::new(&self.word_out, dim);
        for _ in 0..infer_epochs {
            w.document(0, &ids, &mut dv, &mut wi, &mut wo, &schedule);
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("inference produced a non-finite vector".into()));
        }
        Ok(vector)
    }

    /// Mean negative-sampling loss of `vector` as the document vector for
    /// `tokens`, with negatives from `seed` and the full context window.
    /// Nothing is updated.
    pub fn document_objective(&self, vector: &[f64], tokens: &[String], seed: u64) -> Result<f64> {
        let ids = self.vocab.encode(tokens);
        if ids.is_empty() {
            return Err(Error::Data("document has no in-vocabulary tokens".into()));
        }
        if vector.len() != self.config.dim {
            return Err(Error::Data(format!(
                "vector has dimension {}, model has {}",
                vector.len(),
                self.config.dim
            )));
        }
        let dim = self.config.dim;
        let processed = AtomicU64::new(0);
        let schedule = Schedule {
            lr_start: 0.0,
            lr_end: 0.0,
            planned: 0,
            processed: &processed,
        };
        let mut cfg = self.config.clone();
        cfg.subsample = None;
        let mut w = Worker::new(&cfg, &self.vocab, worker_rng(seed, 1));
        w.doc_only = true;
        w.fixed_window = true;
        let mut dv = Frozen::new(vector, dim);
        let mut wi = Frozen::new(&self.word_in, dim);
        let mut wo = Frozen::new(&self.word_out, dim);
        let (loss, n) = w.document(0, &ids, &mut dv, &mut wi, &mut wo, &schedule);
        Ok(loss / n as f64)
    }

    pub(crate) fn from_parts(
        config: EmbedConfig,
        vocab: Vocabulary,
        doc_ids: Vec<String>,
        doc_vectors: Vec<f64>,
        word_in: Vec<f64>,
        word_out: Vec<f64>,
    ) -> Result<Self> {
        let dim = config.dim;
        if doc_vectors.len() != doc_ids.len() * dim
            || word_in.len() != vocab.len() * dim
            || word_out.len() != vocab.len() * dim
        {
            return Err(Error::Corrupt("matrix sizes disagree with header".into()));
        }
        let doc_index = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(EmbeddingModel {
            config,
            vocab,
            doc_ids,
            doc_index,
            doc_vectors,
            word_in,
            word_out,
        })
    }
}
