//! End-to-end retrieval and reranking flows with per-stage timing.
//!
//! Stage boundaries, for every flow:
//!
//! * `first_stage`: everything up to the baseline ranking that feedback is
//!   drawn from (query embedding + first search for dense flows, BM25 +
//!   initial rerank for rerank flows);
//! * `prf_build`: feedback lookup and query reformulation;
//! * `second_stage`: searching or rescoring with the reformulated query.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::embedding_store::{EmbeddingStore, EmbeddingVector, VectorIndex};
use crate::error::{Error, Result};
use crate::lexical::{Bm25Params, Corpus, InvertedIndex, Query, Tokenizer};
use crate::prf_text::{
    aggregate, build_queries, AggregationMethod, FeedbackSet, PrfTextQuery, TextHandling, WindowSpec,
};
use crate::prf_vector::{select_feedback, PrfVectorConfig};
use crate::ranking::RankedList;
use crate::scorer::{ModelProfile, Scorer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextPrfConfig {
    pub handling: TextHandling,
    pub aggregation: AggregationMethod,
    pub depth: usize,
    pub window: WindowSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flow {
    /// BM25 only.
    LexicalOnly,
    /// Query embedding + one inner-product search.
    DenseRetrieve,
    /// Dense search, fuse top-k feedback vectors, search again.
    DenseRetrievePrf(PrfVectorConfig),
    /// BM25 candidates rescored by the scorer.
    Rerank,
    /// Rerank, then rescore the pool with feedback-expanded query texts.
    RerankTextPrf(TextPrfConfig),
    /// Rerank, then rescore the pool against a fused query embedding.
    RerankVectorPrf(PrfVectorConfig),
}

impl Flow {
    pub fn name(&self) -> &'static str {
        match self {
            Flow::LexicalOnly => "lexical",
            Flow::DenseRetrieve => "dense",
            Flow::DenseRetrievePrf(_) => "dense-prf",
            Flow::Rerank => "rerank",
            Flow::RerankTextPrf(_) => "rerank-text-prf",
            Flow::RerankVectorPrf(_) => "rerank-vector-prf",
        }
    }

    fn prf_depth(&self) -> Option<usize> {
        match self {
            Flow::DenseRetrievePrf(c) | Flow::RerankVectorPrf(c) => Some(c.depth),
            Flow::RerankTextPrf(c) => Some(c.depth),
            _ => None,
        }
    }
}

impl fmt::Display for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub first_stage_k: usize,
    pub bm25: Bm25Params,
    pub profile: ModelProfile,
    pub run_tag: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            first_stage_k: 1000,
            bm25: Bm25Params::default(),
            profile: ModelProfile::NONE,
            run_tag: "prf".into(),
        }
    }
}

/// Shared read-only inputs. Each flow checks that what it needs is present.
#[derive(Clone, Copy, Default)]
pub struct Resources<'a> {
    pub corpus: Option<&'a Corpus>,
    pub lexical: Option<&'a InvertedIndex>,
    pub vectors: Option<&'a dyn VectorIndex>,
    pub scorer: Option<&'a dyn Scorer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRecord {
    pub query_id: String,
    pub first_stage_ms: f64,
    pub prf_build_ms: f64,
    pub second_stage_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct FlowOutput {
    pub runs: Vec<RankedList>,
    pub latencies: Vec<LatencyRecord>,
}

struct Stopwatch {
    start: Instant,
    last: Instant,
    marks: [f64; 3],
}

impl Stopwatch {
    fn start() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            marks: [0.0; 3],
        }
    }

    fn lap(&mut self, stage: usize) {
        let now = Instant::now();
        self.marks[stage] = (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
    }

    fn finish(self, query_id: &str) -> LatencyRecord {
        LatencyRecord {
            query_id: query_id.to_owned(),
            first_stage_ms: self.marks[0],
            prf_build_ms: self.marks[1],
            second_stage_ms: self.marks[2],
            total_ms: self.start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

pub struct Pipeline<'a> {
    pub flow: Flow,
    pub config: PipelineConfig,
    pub resources: Resources<'a>,
}

impl<'a> Pipeline<'a> {
    pub fn new(flow: Flow, config: PipelineConfig, resources: Resources<'a>) -> Result<Self> {
        let p = Self {
            flow,
            config,
            resources,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let missing = |what: &str| {
            Err(Error::InvalidConfig(format!(
                "flow {} needs a {what}",
                self.flow.name()
            )))
        };
        if self.config.first_stage_k == 0 {
            return Err(Error::InvalidConfig("first-stage k must be >= 1".into()));
        }
        if let Some(depth) = self.flow.prf_depth() {
            if depth == 0 || depth > self.config.first_stage_k {
                return Err(Error::InvalidConfig(format!(
                    "PRF depth {depth} must be in 1..={}",
                    self.config.first_stage_k
                )));
            }
        }
        let r = &self.resources;
        let needs_lexical = !matches!(self.flow, Flow::DenseRetrieve | Flow::DenseRetrievePrf(_));
        let needs_corpus = matches!(
            self.flow,
            Flow::Rerank | Flow::RerankTextPrf(_) | Flow::RerankVectorPrf(_)
        );
        let needs_vectors = matches!(
            self.flow,
            Flow::DenseRetrieve | Flow::DenseRetrievePrf(_) | Flow::RerankVectorPrf(_)
        );
        if needs_lexical && r.lexical.is_none() {
            return missing("lexical index");
        }
        if needs_corpus && r.corpus.is_none() {
            return missing("corpus");
        }
        if needs_vectors && r.vectors.is_none() {
            return missing("embedding store");
        }
        if !matches!(self.flow, Flow::LexicalOnly) && r.scorer.is_none() {
            return missing("scorer backend");
        }
        if let (Some(v), Some(s)) = (r.vectors, r.scorer) {
            if needs_vectors && v.dim() != s.dim() {
                return Err(Error::DimensionMismatch {
                    expected: v.dim(),
                    actual: s.dim(),
                });
            }
        }
        Ok(())
    }

    /// Runs every query; queries are processed in parallel, output order
    /// follows input order.
    pub fn run(&self, queries: &[Query]) -> Result<FlowOutput> {
        let results: Vec<(RankedList, LatencyRecord)> =
            queries.par_iter().map(|q| self.run_query(q)).collect::<Result<_>>()?;
        let (runs, latencies) = results.into_iter().unzip();
        Ok(FlowOutput { runs, latencies })
    }

    pub fn run_query(&self, query: &Query) -> Result<(RankedList, LatencyRecord)> {
        let mut watch = Stopwatch::start();
        let first = self.first_stage(query)?;
        watch.lap(0);
        let list = self.feedback_stage(self.flow, query, first, Some(&mut watch))?;
        Ok((list, watch.finish(&query.id)))
    }

    /// The baseline ranking for this pipeline's flow family.
    pub fn first_stage(&self, query: &Query) -> Result<FirstStage> {
        match self.flow {
            Flow::LexicalOnly => Ok(FirstStage {
                list: self.bm25(query),
                ..FirstStage::default()
            }),
            Flow::DenseRetrieve | Flow::DenseRetrievePrf(_) => {
                let q = self.embed_query(query)?;
                let list = self.vectors().top_k_search(&query.id, &q, self.config.first_stage_k)?;
                Ok(FirstStage {
                    query_vec: Some(q),
                    list,
                    ..FirstStage::default()
                })
            }
            Flow::Rerank | Flow::RerankTextPrf(_) | Flow::RerankVectorPrf(_) => {
                let candidates = self.bm25(query);
                let pool_ids = candidates.top_ids(candidates.len());
                let pool_texts = self.passage_texts(&pool_ids)?;
                let list = self.score_pool(
                    &query.id,
                    &self.config.profile.query(&query.text),
                    &pool_ids,
                    &pool_texts,
                )?;
                Ok(FirstStage {
                    query_vec: None,
                    pool_ids,
                    pool_texts,
                    list,
                })
            }
        }
    }

    /// Applies `flow`'s feedback step to a first stage computed by this
    /// pipeline. `flow` must belong to the same family as `self.flow`.
    pub fn rerun(&self, flow: Flow, query: &Query, first: &FirstStage) -> Result<RankedList> {
        self.feedback_stage(flow, query, first.clone(), None)
    }

    fn feedback_stage(
        &self,
        flow: Flow,
        query: &Query,
        first: FirstStage,
        mut watch: Option<&mut Stopwatch>,
    ) -> Result<RankedList> {
        let mut lap = |stage| {
            if let Some(w) = watch.as_deref_mut() {
                w.lap(stage);
            }
        };
        if first.list.is_empty() {
            return Ok(first.list);
        }
        match flow {
            Flow::LexicalOnly | Flow::DenseRetrieve | Flow::Rerank => Ok(first.list),
            Flow::DenseRetrievePrf(prf) => {
                let q = first
                    .query_vec
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("dense PRF needs a dense first stage".into()))?;
                let feedback = select_feedback(&first.list, self.vectors(), prf.depth)?;
                let fused = prf.fuse(q, &feedback)?;
                lap(1);
                let list = self
                    .vectors()
                    .top_k_search(&query.id, &fused, self.config.first_stage_k)?;
                lap(2);
                Ok(list)
            }
            Flow::RerankTextPrf(prf) => {
                let variants = self.text_variants(query, &first, prf.depth, prf.handling, prf.window)?;
                lap(1);
                let lists = self.score_variants(query, &first, &variants)?;
                let list = combine_text_lists(prf.handling, prf.aggregation, lists)?;
                lap(2);
                Ok(list)
            }
            Flow::RerankVectorPrf(prf) => {
                if first.pool_ids.is_empty() {
                    return Err(Error::InvalidConfig(
                        "vector reranking needs a rerank first stage".into(),
                    ));
                }
                let store = self.vectors();
                let feedback = select_feedback(&first.list, store, prf.depth)?;
                let q = self.embed_query(query)?;
                let fused = prf.fuse(&q, &feedback)?;
                lap(1);
                let pool = store.fetch_vectors(&first.pool_ids)?;
                let scored = first
                    .pool_ids
                    .into_iter()
                    .zip(&pool)
                    .map(|(id, v)| (id, fused.dot(v)))
                    .collect();
                let list = RankedList::from_scores(&query.id, scored);
                lap(2);
                Ok(list)
            }
        }
    }

    /// Expanded query texts built from the top `depth` reranked passages.
    pub fn text_variants(
        &self,
        query: &Query,
        first: &FirstStage,
        depth: usize,
        handling: TextHandling,
        window: WindowSpec,
    ) -> Result<Vec<PrfTextQuery>> {
        let corpus = self.resources.corpus.expect("validated");
        let feedback_ids = first.list.top_ids(depth);
        let feedback = FeedbackSet {
            query_id: query.id.clone(),
            passages: feedback_ids
                .iter()
                .zip(corpus.fetch_text(&feedback_ids)?)
                .map(|(id, t)| (id.clone(), t.to_owned()))
                .collect(),
        };
        let original = Tokenizer.tokenize(&query.text);
        build_queries(handling, &original, &feedback, window)
    }

    /// One scoring pass over the candidate pool per expanded query.
    pub fn score_variants(
        &self,
        query: &Query,
        first: &FirstStage,
        variants: &[PrfTextQuery],
    ) -> Result<Vec<RankedList>> {
        variants
            .iter()
            .map(|v| {
                self.score_pool(
                    &query.id,
                    &self.config.profile.query(&v.text()),
                    &first.pool_ids,
                    &first.pool_texts,
                )
            })
            .collect()
    }

    fn scorer(&self) -> &'a dyn Scorer {
        self.resources.scorer.expect("validated")
    }

    fn vectors(&self) -> &'a dyn VectorIndex {
        self.resources.vectors.expect("validated")
    }

    fn bm25(&self, query: &Query) -> RankedList {
        self.resources.lexical.expect("validated").bm25_search(
            &query.id,
            &query.text,
            self.config.first_stage_k,
            self.config.bm25,
        )
    }

    fn embed_query(&self, query: &Query) -> Result<EmbeddingVector> {
        self.scorer().embed_one(&self.config.profile.query(&query.text))
    }

    fn passage_texts(&self, ids: &[String]) -> Result<Vec<String>> {
        let corpus = self.resources.corpus.expect("validated");
        Ok(corpus
            .fetch_text(ids)?
            .into_iter()
            .map(|t| self.config.profile.passage(t))
            .collect())
    }

    fn score_pool(&self, query_id: &str, query_text: &str, ids: &[String], texts: &[String]) -> Result<RankedList> {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let scores = self.scorer().score_pairs(query_text, &refs)?;
        if scores.len() != ids.len() {
            return Err(Error::Protocol(format!(
                "scorer returned {} scores for {} candidates",
                scores.len(),
                ids.len()
            )));
        }
        Ok(RankedList::from_scores(
            query_id,
            ids.iter().cloned().zip(scores).collect(),
        ))
    }
}

/// Concatenate-truncate yields one list, used as is; the other handlings
/// are aggregated.
pub fn combine_text_lists(
    handling: TextHandling,
    aggregation: AggregationMethod,
    lists: Vec<RankedList>,
) -> Result<RankedList> {
    match handling {
        TextHandling::ConcatTruncate => lists.into_iter().next().ok_or(Error::EmptyInput),
        _ => aggregate(aggregation, &lists),
    }
}

/// Output of the baseline stage. For rerank flows the candidate pool is
/// kept in BM25 order alongside the reranked list.
#[derive(Debug, Clone, Default)]
pub struct FirstStage {
    pub query_vec: Option<EmbeddingVector>,
    pub pool_ids: Vec<String>,
    pub pool_texts: Vec<String>,
    pub list: RankedList,
}

pub fn run_dense_retrieval_prf(
    queries: &[Query],
    store: &dyn VectorIndex,
    scorer: &dyn Scorer,
    config: PipelineConfig,
    prf: PrfVectorConfig,
) -> Result<FlowOutput> {
    let resources = Resources {
        vectors: Some(store),
        scorer: Some(scorer),
        ..Resources::default()
    };
    Pipeline::new(Flow::DenseRetrievePrf(prf), config, resources)?.run(queries)
}

pub fn run_rerank_text_prf(
    queries: &[Query],
    corpus: &Corpus,
    index: &InvertedIndex,
    scorer: &dyn Scorer,
    config: PipelineConfig,
    prf: TextPrfConfig,
) -> Result<FlowOutput> {
    let resources = Resources {
        corpus: Some(corpus),
        lexical: Some(index),
        scorer: Some(scorer),
        ..Resources::default()
    };
    Pipeline::new(Flow::RerankTextPrf(prf), config, resources)?.run(queries)
}

pub fn run_rerank_vector_prf(
    queries: &[Query],
    corpus: &Corpus,
    index: &InvertedIndex,
    store: &dyn VectorIndex,
    scorer: &dyn Scorer,
    config: PipelineConfig,
    prf: PrfVectorConfig,
) -> Result<FlowOutput> {
    let resources = Resources {
        corpus: Some(corpus),
        lexical: Some(index),
        vectors: Some(store),
        scorer: Some(scorer),
    };
    Pipeline::new(Flow::RerankVectorPrf(prf), config, resources)?.run(queries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySummary {
    pub flow: String,
    pub queries: usize,
    pub repetitions: usize,
    pub mean_total_ms: f64,
    pub median_total_ms: f64,
    pub p95_total_ms: f64,
    pub mean_first_stage_ms: f64,
    pub mean_prf_build_ms: f64,
    pub mean_second_stage_ms: f64,
}

/// Times `repetitions` serial passes over `queries` after one untimed
/// warm-up pass.
pub fn measure_latency(pipeline: &Pipeline<'_>, queries: &[Query], repetitions: usize) -> Result<LatencySummary> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::InvalidConfig("no queries to time".into()));
    }
    for q in queries {
        pipeline.run_query(q)?;
    }
    let mut records = Vec::with_capacity(queries.len() * repetitions);
    for _ in 0..repetitions {
        for q in queries {
            records.push(pipeline.run_query(q)?.1);
        }
    }
    Ok(summarize(pipeline.flow.name(), queries.len(), repetitions, &records))
}

pub fn summarize(flow: &str, queries: usize, repetitions: usize, records: &[LatencyRecord]) -> LatencySummary {
    let n = records.len().max(1) as f64;
    let mean = |f: fn(&LatencyRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let mut totals: Vec<f64> = records.iter().map(|r| r.total_ms).collect();
    totals.sort_by(f64::total_cmp);
    LatencySummary {
        flow: flow.to_owned(),
        queries,
        repetitions,
        mean_total_ms: mean(|r| r.total_ms),
        median_total_ms: quantile(&totals, 0.5),
        p95_total_ms: quantile(&totals, 0.95),
        mean_first_stage_ms: mean(|r| r.first_stage_ms),
        mean_prf_build_ms: mean(|r| r.prf_build_ms),
        mean_second_stage_ms: mean(|r| r.second_stage_ms),
    }
}

/// Nearest-rank quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Embeds every passage of `corpus` (passage-side truncation applied) into a
/// store with the corpus' row order.
pub fn build_dense_store(scorer: &dyn Scorer, corpus: &Corpus, profile: ModelProfile) -> Result<EmbeddingStore> {
    const BATCH: usize = 256;
    let ids = corpus.ids();
    let vectors: Vec<Vec<EmbeddingVector>> = ids
        .par_chunks(BATCH)
        .map(|chunk| {
            let texts: Vec<String> = chunk
                .iter()
                .map(|id| profile.passage(corpus.text(id).expect("id from corpus")))
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            scorer.embed(&refs)
        })
        .collect::<Result<_>>()?;
    EmbeddingStore::build(scorer.dim(), ids.iter().cloned().zip(vectors.into_iter().flatten()))
}
