//! Remote scorer against a stub model server.

mod common;

use std::time::Duration;

use common::StubServer;
use prf_core::lexical::{Corpus, InvertedIndex, Query};
use prf_core::pipelines::{Flow, Pipeline, PipelineConfig, Resources};
use prf_core::scorer::{EmbedRequest, LocalScorer, RemoteScorer, ScoreRequest, Scorer};
use prf_core::Error;
use serde_json::json;

/// Serves the local embedder over the wire, so remote results can be
/// compared with local ones.
fn mirror_server(dim: usize, seed: u64) -> StubServer {
    let local = LocalScorer::new(dim, seed).unwrap();
    StubServer::start(move |method, path, body| match (method, path) {
        ("GET", "/health") => (200, json!({"status": "ok", "model": "mirror", "dim": dim}).to_string()),
        ("POST", "/embed") => {
            let Ok(req) = serde_json::from_str::<EmbedRequest>(body) else {
                return (400, json!({"error": "malformed"}).to_string());
            };
            let vectors: Vec<Vec<f64>> = req.texts.iter().map(|t| local.embed_text(t).into_values()).collect();
            (200, json!({"dim": dim, "vectors": vectors}).to_string())
        }
        ("POST", "/score") => {
            let Ok(req) = serde_json::from_str::<ScoreRequest>(body) else {
                return (400, json!({"error": "malformed"}).to_string());
            };
            let refs: Vec<&str> = req.passages.iter().map(String::as_str).collect();
            (
                200,
                json!({"scores": local.score_pairs(&req.query, &refs).unwrap()}).to_string(),
            )
        }
        _ => (404, "{}".into()),
    })
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("passage {i} word{}", i % 7)).collect()
}

#[test]
fn health_and_connect_adopt_dim() {
    let server = mirror_server(16, 3);
    let remote = RemoteScorer::connect(&server.url, 4, Duration::from_secs(5)).unwrap();
    assert_eq!(remote.dim(), 16);
    let h = remote.health().unwrap();
    assert_eq!((h.status.as_str(), h.model.as_str(), h.dim), ("ok", "mirror", 16));
}

#[test]
fn embed_is_chunked_and_reassembled_in_order() {
    let server = mirror_server(16, 3);
    let remote = RemoteScorer::with_options(&server.url, 16, 4, Duration::from_secs(5));
    let owned = texts(10);
    let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
    let got = remote.embed(&refs).unwrap();
    let want = LocalScorer::new(16, 3).unwrap().embed(&refs).unwrap();
    assert_eq!(got, want);

    let bodies: Vec<EmbedRequest> = server
        .recorded()
        .iter()
        .filter(|r| r.path == "/embed")
        .map(|r| serde_json::from_str(&r.body).unwrap())
        .collect();
    let sizes: Vec<usize> = bodies.iter().map(|b| b.texts.len()).collect();
    assert_eq!(sizes, [4, 4, 2]);
    let flattened: Vec<String> = bodies.into_iter().flat_map(|b| b.texts).collect();
    assert_eq!(flattened, owned);
}

#[test]
fn empty_inputs_make_no_requests() {
    let server = mirror_server(8, 0);
    let remote = RemoteScorer::new(&server.url, 8);
    assert!(remote.embed(&[]).unwrap().is_empty());
    assert!(remote.score_pairs("q", &[]).unwrap().is_empty());
    assert!(server.recorded().is_empty());
}

#[test]
fn score_pairs_match_local_across_chunks() {
    let server = mirror_server(32, 9);
    let remote = RemoteScorer::with_options(&server.url, 32, 3, Duration::from_secs(5));
    let owned = texts(8);
    let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
    let got = remote.score_pairs("word3 passage", &refs).unwrap();
    let want = LocalScorer::new(32, 9)
        .unwrap()
        .score_pairs("word3 passage", &refs)
        .unwrap();
    assert_eq!(got, want);
    assert_eq!(server.recorded().len(), 3);
}

#[test]
fn status_codes_map_to_error_kinds() {
    let server = StubServer::start(|_, path, _| match path {
        "/embed" => (400, json!({"error": "bad body"}).to_string()),
        "/score" => (503, json!({"error": "loading"}).to_string()),
        _ => (503, "{}".into()),
    });
    let remote = RemoteScorer::new(&server.url, 4);
    let e = remote.embed(&["x"]).unwrap_err();
    assert!(matches!(e, Error::Protocol(ref m) if m.contains("400")), "{e}");
    let e = remote.score_pairs("q", &["x"]).unwrap_err();
    assert!(matches!(e, Error::BackendUnavailable(_)), "{e}");
    assert!(matches!(remote.health().unwrap_err(), Error::BackendUnavailable(_)));
}

#[test]
fn short_responses_are_protocol_errors() {
    let server = StubServer::start(|_, path, _| match path {
        "/embed" => (200, json!({"dim": 2, "vectors": [[1.0, 0.0]]}).to_string()),
        "/score" => (200, json!({"scores": [1.0]}).to_string()),
        _ => (404, "{}".into()),
    });
    let remote = RemoteScorer::new(&server.url, 2);
    assert!(matches!(remote.embed(&["a", "b"]).unwrap_err(), Error::Protocol(_)));
    assert!(matches!(
        remote.score_pairs("q", &["a", "b"]).unwrap_err(),
        Error::Protocol(_)
    ));
}

#[test]
fn wrong_dim_and_malformed_json_are_protocol_errors() {
    let server = StubServer::start(|_, path, _| match path {
        "/embed" => (200, json!({"dim": 3, "vectors": [[1.0, 0.0, 2.0]]}).to_string()),
        _ => (200, "not json".into()),
    });
    let remote = RemoteScorer::new(&server.url, 2);
    assert!(matches!(remote.embed(&["a"]).unwrap_err(), Error::Protocol(_)));
    assert!(matches!(
        remote.score_pairs("q", &["a"]).unwrap_err(),
        Error::Protocol(_)
    ));
}

#[test]
fn unreachable_backend_is_unavailable() {
    // Bind then drop to get a port with nothing listening.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let e = RemoteScorer::connect(&url, 4, Duration::from_secs(2)).unwrap_err();
    assert!(e.is_backend());
    assert!(matches!(e, Error::BackendUnavailable(_)));
}

#[test]
fn rerank_preserves_stub_order() {
    // Scores descend with request index, so the reranked list must keep the
    // BM25 candidate order exactly.
    let server = StubServer::start(|_, path, body| match path {
        "/score" => {
            let req: ScoreRequest = serde_json::from_str(body).unwrap();
            let n = req.passages.len();
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            (200, json!({"scores": scores}).to_string())
        }
        _ => (404, "{}".into()),
    });
    let corpus = Corpus::new(vec![
        ("d1".into(), "apple banana".into()),
        ("d2".into(), "apple apple apple".into()),
        ("d3".into(), "banana cherry".into()),
        ("d4".into(), "apple cherry".into()),
    ])
    .unwrap();
    let index = InvertedIndex::build(corpus.iter()).unwrap();
    // One chunk covers the pool, so request index equals BM25 position.
    let remote = RemoteScorer::with_options(&server.url, 4, 64, Duration::from_secs(5));
    let res = Resources {
        corpus: Some(&corpus),
        lexical: Some(&index),
        scorer: Some(&remote),
        ..Resources::default()
    };
    let pipeline = Pipeline::new(Flow::Rerank, PipelineConfig::default(), res).unwrap();
    let q = Query {
        id: "q".into(),
        text: "apple cherry".into(),
    };
    let first = pipeline.first_stage(&q).unwrap();
    let reranked: Vec<&str> = first.list.ids().collect();
    let bm25_order = index.bm25_search("q", &q.text, 1000, Default::default()).top_ids(10);
    assert_eq!(reranked, bm25_order.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(reranked.len(), 4);
}
