//! End-to-end flows on small synthetic data and crafted cases.

use std::collections::BTreeSet;

use prf_core::evaluation::{evaluate, Metric, MetricConfig};
use prf_core::instrument::{CountingIndex, CountingScorer};
use prf_core::lexical::{Corpus, InvertedIndex, Query};
use prf_core::pipelines::{build_dense_store, Flow, Pipeline, PipelineConfig, Resources, TextPrfConfig};
use prf_core::prf_text::{AggregationMethod, TextHandling, WindowSpec};
use prf_core::prf_vector::{PrfVectorConfig, VectorFusion};
use prf_core::scorer::{LocalScorer, ModelProfile, Scorer};
use prf_core::sweep::{run_sweep, SweepGrid, SweepRequest};
use prf_core::synthetic::{generate, SyntheticBenchmark, SyntheticConfig};
use prf_core::trec::write_run;
use prf_core::{EmbeddingStore, RankedList};

struct Fixture {
    bench: SyntheticBenchmark,
    corpus: Corpus,
    index: InvertedIndex,
    store: EmbeddingStore,
    scorer: LocalScorer,
}

impl Fixture {
    fn new() -> Self {
        let bench = generate(&SyntheticConfig {
            passages: 1500,
            queries: 12,
            topics: 30,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let corpus = Corpus::new(bench.corpus.clone()).unwrap();
        let index = InvertedIndex::build(corpus.iter()).unwrap();
        let scorer = LocalScorer::new(64, 42).unwrap();
        let store = build_dense_store(&scorer, &corpus, ModelProfile::NONE).unwrap();
        Self {
            bench,
            corpus,
            index,
            store,
            scorer,
        }
    }

    fn resources(&self) -> Resources<'_> {
        Resources {
            corpus: Some(&self.corpus),
            lexical: Some(&self.index),
            vectors: Some(&self.store),
            scorer: Some(&self.scorer),
        }
    }

    fn run(&self, flow: Flow, config: PipelineConfig) -> Vec<RankedList> {
        Pipeline::new(flow, config, self.resources())
            .unwrap()
            .run(&self.bench.queries)
            .unwrap()
            .runs
    }
}

fn rocchio(alpha: f64, beta: f64, depth: usize) -> PrfVectorConfig {
    PrfVectorConfig {
        fusion: VectorFusion::Rocchio { alpha, beta },
        depth,
    }
}

fn text(handling: TextHandling, aggregation: AggregationMethod, depth: usize) -> TextPrfConfig {
    TextPrfConfig {
        handling,
        aggregation,
        depth,
        window: WindowSpec::new(8, 4).unwrap(),
    }
}

fn run_bytes(runs: &[RankedList]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_run(&mut buf, runs, "t").unwrap();
    buf
}

fn id_set(list: &RankedList) -> BTreeSet<String> {
    list.ids().map(str::to_owned).collect()
}

#[test]
fn identity_rocchio_reproduces_baselines() {
    let f = Fixture::new();
    let cfg = PipelineConfig::default();
    let dense = f.run(Flow::DenseRetrieve, cfg.clone());
    let dense_prf = f.run(Flow::DenseRetrievePrf(rocchio(1.0, 0.0, 3)), cfg.clone());
    assert_eq!(run_bytes(&dense), run_bytes(&dense_prf));
    let rerank = f.run(Flow::Rerank, cfg.clone());
    let rerank_prf = f.run(Flow::RerankVectorPrf(rocchio(1.0, 0.0, 3)), cfg);
    assert_eq!(run_bytes(&rerank), run_bytes(&rerank_prf));
}

#[test]
fn dense_prf_output_depth_is_first_stage_k() {
    let f = Fixture::new();
    let cfg = PipelineConfig {
        first_stage_k: 250,
        ..PipelineConfig::default()
    };
    for list in f.run(Flow::DenseRetrievePrf(rocchio(0.5, 0.5, 5)), cfg) {
        assert_eq!(list.len(), 250);
    }
}

#[test]
fn reranking_conserves_the_candidate_pool() {
    let f = Fixture::new();
    let cfg = PipelineConfig {
        first_stage_k: 200,
        ..PipelineConfig::default()
    };
    let bm25: Vec<RankedList> = f
        .bench
        .queries
        .iter()
        .map(|q| f.index.bm25_search(&q.id, &q.text, 200, cfg.bm25))
        .collect();
    let mut flows = vec![Flow::Rerank, Flow::RerankVectorPrf(rocchio(0.3, 0.7, 10))];
    for h in [
        TextHandling::ConcatTruncate,
        TextHandling::ConcatAggregate,
        TextHandling::SlidingWindow,
    ] {
        for a in [
            AggregationMethod::Average,
            AggregationMethod::Max,
            AggregationMethod::Borda,
        ] {
            flows.push(Flow::RerankTextPrf(text(h, a, 3)));
        }
    }
    for flow in flows {
        for (out, base) in f.run(flow, cfg.clone()).iter().zip(&bm25) {
            assert_eq!(out.len(), base.len(), "{flow}");
            assert_eq!(id_set(out), id_set(base), "{flow}");
        }
    }
}

#[test]
fn vector_rerank_identity_orders_by_original_query_dot() {
    let f = Fixture::new();
    let runs = f.run(Flow::RerankVectorPrf(rocchio(1.0, 0.0, 5)), PipelineConfig::default());
    for (q, list) in f.bench.queries.iter().zip(&runs) {
        let qv = f.scorer.embed_one(&q.text).unwrap();
        let ids: Vec<String> = list.ids().map(str::to_owned).collect();
        let scored = ids
            .iter()
            .map(|id| (id.clone(), qv.dot(&f.store.vector(id).unwrap())))
            .collect();
        assert_eq!(RankedList::from_scores(&q.id, scored).top_ids(ids.len()), ids);
    }
}

#[test]
fn ct_with_self_feedback_keeps_rerank_order() {
    // The top passage is the query text itself, so concatenation only
    // duplicates every query token: a uniform rescaling of the query vector.
    let corpus = Corpus::new(vec![
        ("d0".into(), "solar panel output".into()),
        ("d1".into(), "solar energy panel cost".into()),
        ("d2".into(), "panel discussion on output".into()),
        ("d3".into(), "solar flare".into()),
        ("d4".into(), "output of the solar panel array today".into()),
    ])
    .unwrap();
    let index = InvertedIndex::build(corpus.iter()).unwrap();
    let scorer = LocalScorer::new(256, 42).unwrap();
    let res = Resources {
        corpus: Some(&corpus),
        lexical: Some(&index),
        scorer: Some(&scorer),
        ..Resources::default()
    };
    let q = Query {
        id: "q".into(),
        text: "solar panel output".into(),
    };
    let plain = Pipeline::new(Flow::Rerank, PipelineConfig::default(), res)
        .unwrap()
        .run_query(&q)
        .unwrap()
        .0;
    assert_eq!(plain.top_ids(1), ["d0"]);
    let flow = Flow::RerankTextPrf(text(TextHandling::ConcatTruncate, AggregationMethod::Average, 1));
    let ct = Pipeline::new(flow, PipelineConfig::default(), res)
        .unwrap()
        .run_query(&q)
        .unwrap()
        .0;
    assert_eq!(ct.top_ids(5), plain.top_ids(5));
}

#[test]
fn scoring_pass_counts() {
    let f = Fixture::new();
    let q = &f.bench.queries[0];
    let counting = CountingScorer::new(&f.scorer);
    let res = Resources {
        scorer: Some(&counting),
        ..f.resources()
    };
    let ca = Pipeline::new(
        Flow::RerankTextPrf(text(TextHandling::ConcatAggregate, AggregationMethod::Borda, 3)),
        PipelineConfig::default(),
        res,
    )
    .unwrap();
    let first = ca.first_stage(q).unwrap();
    let variants = ca
        .text_variants(
            q,
            &first,
            3,
            TextHandling::ConcatAggregate,
            WindowSpec::new(8, 4).unwrap(),
        )
        .unwrap();
    assert_eq!(variants.len(), 3);
    assert_eq!(ca.score_variants(q, &first, &variants).unwrap().len(), 3);

    let before = counting.score_passes();
    ca.run_query(q).unwrap();
    assert_eq!(counting.score_passes() - before, 4);

    // Sliding windows: j windows means j + 1 passes.
    let window = WindowSpec::new(8, 4).unwrap();
    let sw = Pipeline::new(
        Flow::RerankTextPrf(TextPrfConfig {
            window,
            ..text(TextHandling::SlidingWindow, AggregationMethod::Max, 2)
        }),
        PipelineConfig::default(),
        res,
    )
    .unwrap();
    let j = sw
        .text_variants(q, &first, 2, TextHandling::SlidingWindow, window)
        .unwrap()
        .len();
    assert!(j > 2);
    let before = counting.score_passes();
    sw.run_query(q).unwrap();
    assert_eq!(counting.score_passes() - before, j + 1);
}

#[test]
fn dense_prf_searches_twice_and_embeds_once() {
    let f = Fixture::new();
    let scorer = CountingScorer::new(&f.scorer);
    let index = CountingIndex::new(&f.store);
    let res = Resources {
        vectors: Some(&index),
        scorer: Some(&scorer),
        ..Resources::default()
    };
    let p = Pipeline::new(
        Flow::DenseRetrievePrf(rocchio(0.5, 0.5, 5)),
        PipelineConfig::default(),
        res,
    )
    .unwrap();
    p.run_query(&f.bench.queries[0]).unwrap();
    assert_eq!(index.searches(), 2);
    assert_eq!(scorer.embed_calls(), 1);
    assert_eq!(scorer.embedded_texts(), 1);
}

#[test]
fn latency_records_are_consistent() {
    let f = Fixture::new();
    let p = Pipeline::new(
        Flow::DenseRetrievePrf(rocchio(0.5, 0.5, 3)),
        PipelineConfig::default(),
        f.resources(),
    )
    .unwrap();
    for r in p.run(&f.bench.queries).unwrap().latencies {
        let stages = r.first_stage_ms + r.prf_build_ms + r.second_stage_ms;
        assert!(r.total_ms >= stages - 1.0, "{r:?}");
        assert!(r.first_stage_ms >= 0.0 && r.prf_build_ms >= 0.0 && r.second_stage_ms >= 0.0);
    }
}

#[test]
fn runs_are_deterministic() {
    let a = Fixture::new();
    let b = Fixture::new();
    let flow = Flow::RerankTextPrf(text(TextHandling::SlidingWindow, AggregationMethod::Borda, 3));
    assert_eq!(
        run_bytes(&a.run(flow, PipelineConfig::default())),
        run_bytes(&b.run(flow, PipelineConfig::default()))
    );
}

#[test]
fn sweep_points_equal_direct_runs() {
    let f = Fixture::new();
    let metrics = [Metric::Map, Metric::Ndcg(10)];
    let cfg = MetricConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let req = SweepRequest {
        queries: &f.bench.queries,
        judgments: &f.bench.qrels,
        metrics: &metrics,
        metric_config: cfg,
        sort_metric: Metric::Map,
        run_dir: Some(dir.path()),
    };

    let base = Flow::DenseRetrievePrf(rocchio(1.0, 1.0, 1));
    let grid = SweepGrid {
        depths: vec![1, 5],
        alphas: vec![0.4, 1.0],
        betas: vec![0.6],
        ..SweepGrid::default()
    };
    let p = Pipeline::new(base, PipelineConfig::default(), f.resources()).unwrap();
    let report = run_sweep(&p, &grid, &req).unwrap();
    assert_eq!(report.outcomes.len(), 4);
    for o in &report.outcomes {
        let direct = f.run(o.flow, PipelineConfig::default());
        assert_eq!(o.report, evaluate(&direct, &f.bench.qrels, &metrics, &cfg).unwrap());
        let file = std::fs::read(dir.path().join(format!("{}.run", o.point.label()))).unwrap();
        let mut want = Vec::new();
        write_run(&mut want, &direct, &format!("prf-{}", o.point.label())).unwrap();
        assert_eq!(file, want);
    }
    let maps: Vec<f64> = report
        .outcomes
        .iter()
        .map(|o| o.report.mean(Metric::Map).unwrap())
        .collect();
    assert!(maps.windows(2).all(|w| w[0] >= w[1]));

    let base = Flow::RerankTextPrf(text(TextHandling::ConcatTruncate, AggregationMethod::Average, 1));
    let grid = SweepGrid {
        depths: vec![1, 3],
        ..SweepGrid::default()
    };
    let p = Pipeline::new(base, PipelineConfig::default(), f.resources()).unwrap();
    let report = run_sweep(&p, &grid, &SweepRequest { run_dir: None, ..req }).unwrap();
    assert_eq!(report.outcomes.len(), 2 * 7);
    for o in &report.outcomes {
        let direct = f.run(o.flow, PipelineConfig::default());
        assert_eq!(
            o.report,
            evaluate(&direct, &f.bench.qrels, &metrics, &cfg).unwrap(),
            "{}",
            o.point
        );
    }
}
