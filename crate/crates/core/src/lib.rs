//! Semantic-security gateway: knowledge-based authentication graded by an
//! LLM judge plus embedding similarity, and retrieval-grounded scam
//! detection over a labelled evidence corpus.

pub mod api;
pub mod auth;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod eval;
pub mod fixtures;
pub mod fraud;
pub mod llm;
pub mod segment;
pub mod store;
pub mod vocab;
