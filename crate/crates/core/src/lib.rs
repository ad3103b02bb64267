//! Patient-level code embeddings from insurance claims, and the prospective
//! risk-score experiment built on them.
//!
//! The pipeline runs claims and members through cohort assembly
//! ([`claims`]), vocabulary building ([`vocab`]) and paragraph-vector
//! training ([`embed`]), then fits ridge and boosted-tree learners
//! ([`models`]) on either the engineered baseline features ([`features`])
//! or the learned document vectors, and scores them with R², MAE and
//! predictive ratios by sex and age band ([`eval`]). [`synth`] generates a
//! claims population with planted conditions for end-to-end runs, and
//! [`pipeline`] persists every stage under a work directory.

pub mod bands;
pub mod claims;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod pipeline;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
