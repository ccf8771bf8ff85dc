//! Adaptive personalized conversational retrieval.
//!
//! The pipeline identifies a per-turn personalization level, produces three
//! query reformulations per turn, retrieves each with BM25, min-max
//! normalizes the ranking lists, fits one fusion weight vector per level by
//! exhaustive grid search over the weight simplex, and linearly fuses the
//! lists into a final run, evaluated with TREC-style metrics.
//!
//! Modules map onto the stages:
//!
//! - [`session`], [`corpus`], [`trec`]: data model and file formats
//! - [`retrieval`]: inverted index + BM25
//! - [`reformulate`]: chat-backed level identification and rewriting
//! - [`fusion`]: normalization and the three fusion strategies
//! - [`weight_opt`]: simplex enumeration and per-level weight fitting
//! - [`estimators`]: baseline per-turn weight identification methods
//! - [`metrics`]: MRR / NDCG@k / Recall@k evaluation
//! - [`synth`]: deterministic desk-scale test collections
//! - [`pipeline`]: end-to-end orchestration

pub mod corpus;
pub mod error;
pub mod estimators;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod reformulate;
pub mod retrieval;
pub mod session;
pub mod synth;
pub mod trec;
pub mod util;
pub mod weight_opt;

pub use error::{Error, Result};
