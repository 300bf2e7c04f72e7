//! Fuzzy answer-span augmentation for low-resource reading comprehension,
//! span-score document reranking, and the evaluation suite used to measure
//! both (character-overlap F1, exact match, recall, DRA@k).
//!
//! The usual flow is [`corpus::load_dataset`] → [`augment::augment_dataset`]
//! → [`augment::emit_stage_manifests`] for training data, and
//! [`extract::extract_dataset`] (or an external reader's predictions) →
//! [`rerank::rerank_all`] → [`metrics::evaluate`] at inference time.

pub mod artifact;
pub mod augment;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod extract;
pub mod metrics;
pub mod rerank;

pub use error::{Error, Result};
