//! Pseudo-relevance feedback on top of BM25 and dense inner-product retrieval.
//!
//! The crate covers the whole experimental loop: lexical and dense first
//! stages, text-based feedback (query expansion with score aggregation),
//! vector-based feedback (average and Rocchio fusion), TREC-style
//! evaluation with significance testing, parameter sweeps and latency
//! measurement.

pub mod embedding_store;
pub mod error;
pub mod evaluation;
pub mod instrument;
pub mod lexical;
pub mod pipelines;
pub mod prf_text;
pub mod prf_vector;
pub mod ranking;
pub mod scorer;
pub mod sweep;
pub mod synthetic;
pub mod trec;

pub use embedding_store::{EmbeddingStore, EmbeddingVector, VectorIndex};
pub use error::{Error, Result};
pub use ranking::{RankedList, ScoredPassage};
