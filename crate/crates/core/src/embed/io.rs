//! Model container and vector export.
//!
//! Model file layout (little-endian):
//!
//! | bytes          | content                                             |
//! |----------------|-----------------------------------------------------|
//! | 8              | magic `CLVECEMB`                                    |
//! | 4              | format version (`u32`)                              |
//! | 8              | header length `h` (`u64`)                           |
//! | h              | UTF-8 JSON header: version string, config, vocab, doc ids |
//! | 8·D·dim        | document vectors (`f64`, row-major)                 |
//! | 8·V·dim        | input word vectors                                  |
//! | 8·V·dim        | output word vectors                                 |
//! | 32             | SHA-256 of every preceding byte                     |

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedConfig, EmbeddingModel};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"CLVECEMB";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    config: EmbedConfig,
    vocab_min_count: u64,
    vocab_alpha: f64,
    vocab_tokens: Vec<String>,
    vocab_counts: Vec<u64>,
    doc_ids: Vec<String>,
}

fn version_string(v: u32) -> String {
    format!("claimvec-embedding/{v}")
}

pub fn model_to_bytes(model: &EmbeddingModel) -> Result<Vec<u8>> {
    let header = Header {
        version: version_string(MODEL_FORMAT_VERSION),
        config: model.config.clone(),
        vocab_min_count: model.vocab.min_count(),
        vocab_alpha: model.vocab.alpha(),
        vocab_tokens: model.vocab.tokens().to_vec(),
        vocab_counts: model.vocab.counts().to_vec(),
        doc_ids: model.doc_ids.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let n_floats = model.doc_vectors.len() + model.word_in.len() + model.word_out.len();
    let mut buf = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 * n_floats + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in model
        .doc_vectors
        .iter()
        .chain(&model.word_in)
        .chain(&model.word_out)
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt(format!("truncated while reading {what}")))?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

fn read_floats(bytes: &[u8], pos: &mut usize, n: usize, what: &str) -> Result<Vec<f64>> {
    let raw = take(bytes, pos, n * 8, what)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EmbeddingModel> {
    let mut pos = 0;
    if take(bytes, &mut pos, 8, "magic")? != MAGIC {
        return Err(Error::Corrupt(
            "not a claimvec embedding model (bad magic)".into(),
        ));
    }
    let version = u32::from_le_bytes(
        take(bytes, &mut pos, 4, "version")?
            .try_into()
            .expect("4 bytes"),
    );
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version_string(version),
            expected: version_string(MODEL_FORMAT_VERSION),
        });
    }
    if bytes.len() < 32 + pos {
        return Err(Error::Corrupt("truncated file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let hlen = u64::from_le_bytes(
        take(body, &mut pos, 8, "header length")?
            .try_into()
            .expect("8 bytes"),
    );
    let hlen =
        usize::try_from(hlen).map_err(|_| Error::Corrupt("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(take(body, &mut pos, hlen, "header")?)
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    if header.version != version_string(MODEL_FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: version_string(MODEL_FORMAT_VERSION),
        });
    }
    let dim = header.config.dim;
    let v = header.vocab_tokens.len();
    let d = header.doc_ids.len();
    let doc_vectors = read_floats(body, &mut pos, d * dim, "document vectors")?;
    let word_in = read_floats(body, &mut pos, v * dim, "input word vectors")?;
    let word_out = read_floats(body, &mut pos, v * dim, "output word vectors")?;
    if pos != body.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            body.len() - pos
        )));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let vocab = Vocabulary::from_counts(
        header.vocab_tokens.into_iter().zip(header.vocab_counts),
        header.vocab_min_count,
        header.vocab_alpha,
    )?;
    if vocab.len() != v {
        return Err(Error::Corrupt(
            "vocabulary does not rebuild to the stored size".into(),
        ));
    }
    EmbeddingModel::from_parts(
        header.config,
        vocab,
        header.doc_ids,
        doc_vectors,
        word_in,
        word_out,
    )
}

pub fn save_model(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// word2vec-style text: `N dim`, then `doc:<id> v1 .. vdim` rows followed
/// by `word:<code>` rows (input vectors) when `include_words` is set.
pub fn export_vectors<W: Write>(
    model: &EmbeddingModel,
    mut w: W,
    include_words: bool,
) -> Result<()> {
    let io = |e| Error::io("<vectors>", e);
    let dim = model.dim();
    let n = model.n_docs() + if include_words { model.vocab.len() } else { 0 };
    writeln!(w, "{n} {dim}").map_err(io)?;
    let mut row = |label: &str, values: &[f64]| -> Result<()> {
        write!(w, "{label}").map_err(io)?;
        for v in values {
            write!(w, " {v}").map_err(io)?;
        }
        writeln!(w).map_err(io)
    };
    for (i, id) in model.doc_ids.iter().enumerate() {
        row(
            &format!("doc:{id}"),
            &model.doc_vectors[i * dim..(i + 1) * dim],
        )?;
    }
    if include_words {
        for (i, tok) in model.vocab.tokens().iter().enumerate() {
            row(
                &format!("word:{tok}"),
                &model.word_in[i * dim..(i + 1) * dim],
            )?;
        }
    }
    Ok(())
}
