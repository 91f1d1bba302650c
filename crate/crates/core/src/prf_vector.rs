//! Vector-based feedback: move the query embedding towards the embeddings of
//! the top-ranked passages. Only the positive (feedback) term is modelled.

use std::fmt;

use crate::embedding_store::{EmbeddingVector, VectorIndex};
use crate::error::{Error, Result};
use crate::ranking::RankedList;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VectorFusion {
    /// Mean of the query and the feedback vectors, query counted once.
    Average,
    /// `alpha * query + beta * mean(feedback)`.
    Rocchio { alpha: f64, beta: f64 },
}

impl fmt::Display for VectorFusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorFusion::Average => f.write_str("average"),
            VectorFusion::Rocchio { alpha, beta } => write!(f, "rocchio(a={alpha},b={beta})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfVectorConfig {
    pub fusion: VectorFusion,
    pub depth: usize,
}

impl PrfVectorConfig {
    pub fn fuse(&self, query: &EmbeddingVector, feedback: &[EmbeddingVector]) -> Result<EmbeddingVector> {
        match self.fusion {
            VectorFusion::Average => fuse_average(query, feedback),
            VectorFusion::Rocchio { alpha, beta } => fuse_rocchio(query, feedback, alpha, beta),
        }
    }
}

fn check(query: &EmbeddingVector, feedback: &[EmbeddingVector]) -> Result<()> {
    if feedback.is_empty() {
        return Err(Error::EmptyFeedback);
    }
    if let Some(bad) = feedback.iter().find(|v| v.dim() != query.dim()) {
        return Err(Error::DimensionMismatch {
            expected: query.dim(),
            actual: bad.dim(),
        });
    }
    Ok(())
}

fn sum_into(acc: &mut [f64], vectors: &[EmbeddingVector]) {
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += x;
        }
    }
}

fn finish(values: Vec<f64>) -> Result<EmbeddingVector> {
    EmbeddingVector::new(values)
}

pub fn fuse_average(query: &EmbeddingVector, feedback: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    check(query, feedback)?;
    let mut acc = query.values().to_vec();
    sum_into(&mut acc, feedback);
    let n = (feedback.len() + 1) as f64;
    finish(acc.into_iter().map(|x| x / n).collect())
}

pub fn fuse_rocchio(
    query: &EmbeddingVector,
    feedback: &[EmbeddingVector],
    alpha: f64,
    beta: f64,
) -> Result<EmbeddingVector> {
    check(query, feedback)?;
    let mut mean = vec![0.0; query.dim()];
    sum_into(&mut mean, feedback);
    let k = feedback.len() as f64;
    finish(
        query
            .values()
            .iter()
            .zip(mean)
            .map(|(q, s)| alpha * q + beta * (s / k))
            .collect(),
    )
}

/// Stored vectors of the first `min(k, n)` passages of `run`, in rank order.
pub fn select_feedback(run: &RankedList, index: &dyn VectorIndex, k: usize) -> Result<Vec<EmbeddingVector>> {
    if run.is_empty() || k == 0 {
        return Err(Error::EmptyFeedback);
    }
    index.fetch_vectors(&run.top_ids(k))
}
