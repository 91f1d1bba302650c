//! Embedding and pairwise-scoring backends.
//!
//! [`LocalScorer`] is a seeded hashing embedder that needs no model and is
//! bit-reproducible everywhere. [`RemoteScorer`] speaks the JSON model-server
//! protocol:
//!
//! ```text
//! POST /embed   {"texts": [..]}                 -> {"dim": d, "vectors": [[..], ..]}
//! POST /score   {"query": q, "passages": [..]}  -> {"scores": [..]}
//! GET  /health                                  -> {"status": "ok", "model": m, "dim": d}
//! ```

use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding_store::{dot_f64, EmbeddingVector};
use crate::error::{Error, Result};
use crate::lexical::Tokenizer;

pub trait Scorer: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per text, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    /// One relevance score per passage, in input order. Higher is better.
    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.embed(&[text])?;
        v.pop()
            .ok_or_else(|| Error::Protocol("backend returned no vector".into()))
    }
}

/// Keeps the first `max_tokens` whitespace-separated tokens.
pub fn truncate_for_model(text: &str, max_tokens: usize) -> String {
    let mut tokens = text.split_whitespace();
    let kept: Vec<&str> = tokens.by_ref().take(max_tokens).collect();
    if tokens.next().is_none() {
        text.to_owned()
    } else {
        kept.join(" ")
    }
}

/// Input length limits applied before text reaches a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelProfile {
    pub name: &'static str,
    pub query_max_tokens: Option<usize>,
    pub passage_max_tokens: Option<usize>,
}

impl ModelProfile {
    pub const NONE: Self = Self {
        name: "none",
        query_max_tokens: None,
        passage_max_tokens: None,
    };
    /// Cross-encoder split of a 512-token input: 256 for the query side.
    pub const BERT: Self = Self {
        name: "bert",
        query_max_tokens: Some(256),
        passage_max_tokens: Some(256),
    };
    pub const REPBERT: Self = Self {
        name: "repbert",
        query_max_tokens: Some(20),
        passage_max_tokens: Some(256),
    };
    pub const ANCE: Self = Self {
        name: "ance",
        query_max_tokens: Some(64),
        passage_max_tokens: Some(512),
    };

    pub fn query(&self, text: &str) -> String {
        match self.query_max_tokens {
            Some(n) => truncate_for_model(text, n),
            None => text.to_owned(),
        }
    }

    pub fn passage(&self, text: &str) -> String {
        match self.passage_max_tokens {
            Some(n) => truncate_for_model(text, n),
            None => text.to_owned(),
        }
    }
}

impl FromStr for ModelProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::NONE),
            "bert" => Ok(Self::BERT),
            "repbert" => Ok(Self::REPBERT),
            "ance" => Ok(Self::ANCE),
            other => Err(Error::InvalidConfig(format!("unknown model profile {other:?}"))),
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// splitmix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Signed feature hashing of lexical tokens.
///
/// Each token hashes (FNV-1a, then splitmix64 keyed by the seed) to a bucket
/// `h % dim` and a sign from the top bit. Integer bucket counts are scaled by
/// `1 / sqrt(token_count)` and rounded to `f32`, so stored rows and fresh
/// embeddings score identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalScorer {
    dim: usize,
    seed: u64,
}

impl LocalScorer {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be >= 1".into()));
        }
        Ok(Self { dim, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let tokens = Tokenizer.tokenize(text);
        let mut counts = vec![0i64; self.dim];
        for t in &tokens {
            let h = mix64(fnv1a(t.as_bytes()) ^ self.seed);
            let bucket = (h % self.dim as u64) as usize;
            counts[bucket] += if h >> 63 == 1 { -1 } else { 1 };
        }
        if tokens.is_empty() {
            return EmbeddingVector::zeros(self.dim);
        }
        let norm = (tokens.len() as f64).sqrt();
        let values = counts
            .into_iter()
            .map(|c| f64::from((c as f64 / norm) as f32))
            .collect();
        EmbeddingVector::new(values).expect("finite by construction")
    }
}

impl Scorer for LocalScorer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        let q = self.embed_text(query);
        Ok(passages
            .iter()
            .map(|p| dot_f64(q.values(), self.embed_text(p).values()))
            .collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub query: String,
    pub passages: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
    pub dim: usize,
}

/// HTTP client for the model server. Requests are chunked and reassembled
/// in order; there are no retries.
pub struct RemoteScorer {
    base: String,
    dim: usize,
    chunk_size: usize,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteScorer")
            .field("base", &self.base)
            .field("dim", &self.dim)
            .field("chunk_size", &self.chunk_size)
            .finish_non_exhaustive()
    }
}

impl RemoteScorer {
    pub const DEFAULT_CHUNK: usize = 32;
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn new(base_url: &str, dim: usize) -> Self {
        Self::with_options(base_url, dim, Self::DEFAULT_CHUNK, Self::DEFAULT_TIMEOUT)
    }

    pub fn with_options(base_url: &str, dim: usize, chunk_size: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            dim,
            chunk_size: chunk_size.max(1),
            agent,
        }
    }

    /// Connects to `/health` and adopts the advertised dimension.
    pub fn connect(base_url: &str, chunk_size: usize, timeout: Duration) -> Result<Self> {
        let mut scorer = Self::with_options(base_url, 0, chunk_size, timeout);
        scorer.dim = scorer.health()?.dim;
        Ok(scorer)
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let url = format!("{}/health", self.base);
        let resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::BackendUnavailable(format!("GET {url}: {e}")))?;
        let health: HealthResponse = read_body(resp, &url)?;
        if health.status != "ok" {
            return Err(Error::BackendUnavailable(format!(
                "{url} reports status {:?}",
                health.status
            )));
        }
        Ok(health)
    }

    fn post<Req: Serialize, Resp: serde::de::DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| Error::BackendUnavailable(format!("POST {url}: {e}")))?;
        read_body(resp, &url)
    }
}

fn read_body<T: serde::de::DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>, url: &str) -> Result<T> {
    let status = resp.status().as_u16();
    match status {
        200 => resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Protocol(format!("{url}: malformed response body: {e}"))),
        503 => Err(Error::BackendUnavailable(format!("{url}: model unavailable (503)"))),
        other => {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            Err(Error::Protocol(format!("{url}: HTTP {other}: {detail}")))
        }
    }
}

impl Scorer for RemoteScorer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.chunk_size) {
            let req = EmbedRequest {
                texts: chunk.iter().map(|t| (*t).to_owned()).collect(),
            };
            let resp: EmbedResponse = self.post("/embed", &req)?;
            if resp.vectors.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/embed returned {} vectors for {} texts",
                    resp.vectors.len(),
                    chunk.len()
                )));
            }
            for values in resp.vectors {
                if values.len() != self.dim || resp.dim != self.dim {
                    return Err(Error::Protocol(format!(
                        "/embed returned dim {} (declared {}), expected {}",
                        values.len(),
                        resp.dim,
                        self.dim
                    )));
                }
                out.push(EmbeddingVector::new(values).map_err(|e| Error::Protocol(e.to_string()))?);
            }
        }
        Ok(out)
    }

    fn score_pairs(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(passages.len());
        for chunk in passages.chunks(self.chunk_size) {
            let req = ScoreRequest {
                query: query.to_owned(),
                passages: chunk.iter().map(|p| (*p).to_owned()).collect(),
            };
            let resp: ScoreResponse = self.post("/score", &req)?;
            if resp.scores.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/score returned {} scores for {} passages",
                    resp.scores.len(),
                    chunk.len()
                )));
            }
            if resp.scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::Protocol("/score returned a non-finite score".into()));
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }
}
