//! Exact inner-product search over an immutable matrix of passage embeddings.
//!
//! Rows are held as `f32` (the on-disk precision); queries and all score
//! accumulation use `f64`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ranking::{score_order, RankedList};

const MAGIC: &[u8; 4] = b"PRFV";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// A finite, fixed-dimension embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("embedding must have dim >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot_f64(&self.0, &other.0)
    }

    pub(crate) fn from_values_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Sequential `f64` dot product. Every score in the crate goes through this
/// or [`dot_row`], which accumulate in the same order.
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn dot_row(query: &[f64], row: &[f32]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in query.iter().zip(row) {
        acc += x * f64::from(*y);
    }
    acc
}

/// Anything that can answer exact top-k inner-product queries and hand back
/// stored vectors by id. Pipelines are written against this so search calls
/// can be counted or wrapped.
pub trait VectorIndex: Sync {
    fn dim(&self) -> usize;
    fn top_k_search(&self, query_id: &str, query: &EmbeddingVector, k: usize) -> Result<RankedList>;
    fn fetch_vectors(&self, ids: &[String]) -> Result<Vec<EmbeddingVector>>;
}

/// Immutable passage embedding matrix with its id table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    matrix: Vec<f32>,
    ids: Vec<String>,
    positions: HashMap<String, usize>,
}

impl EmbeddingStore {
    /// Builds a store from `(id, vector)` pairs, keeping input row order.
    /// Vectors are narrowed to `f32`.
    pub fn build<I>(dim: usize, passages: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, EmbeddingVector)>,
    {
        if dim == 0 {
            return Err(Error::InvalidConfig("store dim must be >= 1".into()));
        }
        let mut matrix = Vec::new();
        let mut ids = Vec::new();
        let mut positions = HashMap::new();
        for (id, vector) in passages {
            if vector.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: vector.dim(),
                });
            }
            if positions.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            matrix.extend(vector.values().iter().map(|&v| v as f32));
            ids.push(id);
        }
        Ok(Self {
            dim,
            matrix,
            ids,
            positions,
        })
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.matrix[index * self.dim..(index + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Widened copy of a stored row.
    pub fn vector(&self, id: &str) -> Option<EmbeddingVector> {
        self.position(id)
            .map(|i| EmbeddingVector::from_values_unchecked(self.row(i).iter().map(|&v| f64::from(v)).collect()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.count() as u64).to_le_bytes())?;
        for v in &self.matrix {
            out.write_all(&v.to_le_bytes())?;
        }
        for id in &self.ids {
            let bytes = id.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| Error::Format(format!("passage id longer than 65535 bytes: {id:?}")))?;
            out.write_all(&len.to_le_bytes())?;
            out.write_all(bytes)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "truncated header: expected {HEADER_LEN} bytes, found {}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("dim must be >= 1".into()));
        }
        let matrix_bytes = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(dim))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("count {count} x dim {dim} overflows")))?;
        let matrix_end = HEADER_LEN + matrix_bytes;
        if bytes.len() < matrix_end {
            return Err(Error::Format(format!(
                "truncated payload: expected at least {matrix_end} bytes, found {}",
                bytes.len()
            )));
        }
        let matrix: Vec<f32> = bytes[HEADER_LEN..matrix_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at matrix offset {i}")));
        }

        let count = count as usize;
        let mut ids = Vec::with_capacity(count);
        let mut positions = HashMap::with_capacity(count);
        let mut at = matrix_end;
        for row in 0..count {
            if bytes.len() < at + 2 {
                return Err(Error::Format(format!(
                    "truncated id table at record {row}: expected at least {} bytes, found {}",
                    at + 2,
                    bytes.len()
                )));
            }
            let len = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
            at += 2;
            if bytes.len() < at + len {
                return Err(Error::Format(format!(
                    "truncated id table at record {row}: expected at least {} bytes, found {}",
                    at + len,
                    bytes.len()
                )));
            }
            let id = std::str::from_utf8(&bytes[at..at + len])
                .map_err(|e| Error::Format(format!("id record {row} is not UTF-8: {e}")))?
                .to_owned();
            at += len;
            if positions.insert(id.clone(), row).is_some() {
                return Err(Error::Format(format!("duplicate id {id:?} in id table")));
            }
            ids.push(id);
        }
        if at != bytes.len() {
            return Err(Error::Format(format!(
                "trailing data: expected {at} bytes, found {}",
                bytes.len()
            )));
        }
        Ok(Self {
            dim,
            matrix,
            ids,
            positions,
        })
    }
}

impl VectorIndex for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Returns the `min(k, count)` rows with the largest inner product.
    fn top_k_search(&self, query_id: &str, query: &EmbeddingVector, k: usize) -> Result<RankedList> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        let q = query.values();
        let mut scored: Vec<(f64, u32)> = (0..self.count()).map(|i| (dot_row(q, self.row(i)), i as u32)).collect();
        let cmp = |a: &(f64, u32), b: &(f64, u32)| {
            score_order((&self.ids[a.1 as usize], a.0), (&self.ids[b.1 as usize], b.0))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        let top = scored
            .into_iter()
            .map(|(s, i)| (self.ids[i as usize].clone(), s))
            .collect();
        Ok(RankedList::from_scores(query_id, top))
    }

    fn fetch_vectors(&self, ids: &[String]) -> Result<Vec<EmbeddingVector>> {
        ids.iter()
            .map(|id| self.vector(id).ok_or_else(|| Error::UnknownId(id.clone())))
            .collect()
    }
}
