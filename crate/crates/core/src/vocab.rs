//! Token vocabulary and the unigram-power noise distribution.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::claims::Cohort;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_COUNT: u64 = 5;
pub const DEFAULT_ALPHA: f64 = 0.75;

/// Walker/Vose alias table for O(1) categorical draws.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// `weights` must be non-negative with a positive sum.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();

        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        AliasTable { prob, alias }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index_of: HashMap<String, usize>,
    probs: Vec<f64>,
    noise: AliasTable,
    alpha: f64,
    min_count: u64,
}

impl Vocabulary {
    /// Builds from `(token, count)` pairs. Tokens below `min_count` are dropped;
    /// ids go by descending count, ties lexicographic.
    pub fn from_counts<I, S>(counts: I, min_count: u64, alpha: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        if !alpha.is_finite() {
            return Err(Error::Config("alpha must be finite".into()));
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .map(|(t, c)| (t.into(), c))
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let weights: Vec<f64> = kept.iter().map(|(_, c)| (*c as f64).powf(alpha)).collect();
        let total: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / total).collect();
        let noise = AliasTable::new(&weights);
        let index_of = kept
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let (tokens, counts) = kept.into_iter().unzip();
        Ok(Vocabulary {
            tokens,
            counts,
            index_of,
            probs,
            noise,
            alpha,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index_of.get(token).copied()
    }

    /// Noise probability `count^alpha / Σ count^alpha`.
    pub fn noise_prob(&self, id: usize) -> f64 {
        self.probs[id]
    }

    pub fn noise_probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// word2vec-style keep probability for frequent-token subsampling.
    pub fn keep_probability(&self, id: usize, threshold: f64) -> f64 {
        let f = self.counts[id] as f64 / self.total_count() as f64;
        let r = threshold / f;
        (r.sqrt() + r).min(1.0)
    }

    /// Maps tokens to ids, skipping out-of-vocabulary ones.
    pub fn encode<'a, I>(&self, tokens: I) -> Vec<u32>
    where
        I: IntoIterator<Item = &'a String>,
    {
        tokens
            .into_iter()
            .filter_map(|t| self.id(t).map(|i| i as u32))
            .collect()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<vocab>", e);
        writeln!(w, "{} {} {}", self.len(), self.min_count, self.alpha).map_err(io)?;
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("vocabulary file is empty".into()))?
            .map_err(|e| Error::io("<vocab>", e))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad_header = || {
            Error::parse(
                1,
                "header",
                format!("expected `V min_count alpha`, got `{header}`"),
            )
        };
        if parts.len() != 3 {
            return Err(bad_header());
        }
        let v: usize = parts[0].parse().map_err(|_| bad_header())?;
        let min_count: u64 = parts[1].parse().map_err(|_| bad_header())?;
        let alpha: f64 = parts[2].parse().map_err(|_| bad_header())?;
        let mut pairs = Vec::with_capacity(v);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<vocab>", e))?;
            let lineno = i as u64 + 2;
            let (tok, cnt) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(lineno, "token", "expected `token<TAB>count`"))?;
            let cnt: u64 = cnt
                .parse()
                .map_err(|_| Error::parse(lineno, "count", format!("`{cnt}` is not a count")))?;
            pairs.push((tok.to_string(), cnt));
        }
        if pairs.len() != v {
            return Err(Error::Data(format!(
                "vocabulary header says {v} tokens, found {}",
                pairs.len()
            )));
        }
        let vocab = Vocabulary::from_counts(pairs, min_count, alpha)?;
        if vocab.len() != v {
            return Err(Error::Data(
                "vocabulary file contains tokens below its min_count".into(),
            ));
        }
        Ok(vocab)
    }
}

pub fn count_tokens(cohort: &Cohort) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in &cohort.documents {
        for t in &doc.tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    counts
}

pub fn build_vocab(cohort: &Cohort, min_count: u64, alpha: f64) -> Result<Vocabulary> {
    if cohort.is_empty() {
        return Err(Error::Data(
            "cannot build a vocabulary from an empty cohort".into(),
        ));
    }
    Vocabulary::from_counts(count_tokens(cohort), min_count, alpha)
}

/// Draws a noise token, rejecting `exclude` when given.
pub fn sample_negative<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    rng: &mut R,
    exclude: Option<usize>,
) -> Result<usize> {
    match exclude {
        None => Ok(vocab.noise.sample(rng)),
        Some(_) if vocab.len() < 2 => Err(Error::Data(
            "cannot draw a negative distinct from the target: vocabulary has one token".into(),
        )),
        Some(x) => loop {
            let id = vocab.noise.sample(rng);
            if id != x {
                return Ok(id);
            }
        },
    }
}
