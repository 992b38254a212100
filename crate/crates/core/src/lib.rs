//! Faceted document retrieval with BM25 first-stage search, neural
//! reranking models and reciprocal rank fusion.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod index;
pub mod models;
pub mod rerank;
pub mod synth;
pub mod text;
pub mod wordpiece;

pub use error::{Error, Result};
