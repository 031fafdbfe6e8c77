//! Batch pipeline for analyzing self-disclosure and community support in
//! social-media posts: a prompted LLM backend detects disclosure posts, a
//! native UMAP + HDBSCAN stack clusters them, and further prompt stages
//! summarize per-cluster topics and map the support offered in high-karma
//! comments back onto those topics. Everything is runnable offline against
//! deterministic mock backends.

pub mod cluster;
pub mod corpus;
pub mod detect;
pub mod embed;
pub mod evaluate;
pub mod gateway;
pub mod hash;
pub mod reduce;
pub mod summarize;
pub mod support;

pub use corpus::{Comment, CorpusPartition, DisclosureLabel, DisclosureValue, LabelSource, Post};
pub use gateway::{ChatBackend, ChatRequest, ChatResponse, Gateway, TokenBudget};
