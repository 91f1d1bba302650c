//! Call-counting wrappers around scorers and vector indexes.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::embedding_store::{EmbeddingVector, VectorIndex};
use crate::error::Result;
use crate::ranking::RankedList;
use crate::scorer::Scorer;

pub struct CountingScorer<'a> {
    inner: &'a dyn Scorer,
    embed_calls: AtomicUsize,
    embedded_texts: AtomicUsize,
    score_passes: AtomicUsize,
}

impl<'a> CountingScorer<'a> {
    pub fn new(inner: &'a dyn Scorer) -> Self {
        Self {
            inner,
            embed_calls: AtomicUsize::new(0),
            embedded_texts: AtomicUsize::new(0),
            score_passes: AtomicUsize::new(0),
        }
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::Relaxed)
    }

    pub fn embedded_texts(&self) -> usize {
        self.embedded_texts.load(Ordering::Relaxed)
    }

    /// Number of `score_pairs` calls, i.e. candidate-scoring passes.
    pub fn score_passes(&self) -> usize {
        self.score_passes.load(Ordering::Relaxed)
    }
}

impl Scorer for CountingScorer<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        self.embed_calls.fetch_add(1, Ordering::Relaxed);
        self.embedded_texts.fetch_add(texts.len(), Ordering::Relaxed);
        self.inner.embed(texts)
    }

    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        self.score_passes.fetch_add(1, Ordering::Relaxed);
        self.inner.score_pairs(query, passages)
    }
}

pub struct CountingIndex<'a> {
    inner: &'a dyn VectorIndex,
    searches: AtomicUsize,
    fetches: AtomicUsize,
}

impl<'a> CountingIndex<'a> {
    pub fn new(inner: &'a dyn VectorIndex) -> Self {
        Self {
            inner,
            searches: AtomicUsize::new(0),
            fetches: AtomicUsize::new(0),
        }
    }

    pub fn searches(&self) -> usize {
        self.searches.load(Ordering::Relaxed)
    }

    pub fn fetches(&self) -> usize {
        self.fetches.load(Ordering::Relaxed)
    }
}

impl VectorIndex for CountingIndex<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn top_k_search(&self, query_id: &str, query: &EmbeddingVector, k: usize) -> Result<RankedList> {
        self.searches.fetch_add(1, Ordering::Relaxed);
        self.inner.top_k_search(query_id, query, k)
    }

    fn fetch_vectors(&self, ids: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        self.inner.fetch_vectors(ids)
    }
}
