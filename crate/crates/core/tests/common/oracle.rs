//! Brute-force references, written without reusing library internals.

use std::collections::HashMap;

use prf_core::trec::Judgments;
use prf_core::{EmbeddingStore, EmbeddingVector, RankedList};
use rand::Rng;

/// Scores every row, sorts by (score desc, id asc), keeps `k`.
pub fn brute_search(store: &EmbeddingStore, q: &EmbeddingVector, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = (0..store.count())
        .map(|r| {
            let row = store.row(r);
            let mut s = 0.0f64;
            for (i, x) in row.iter().enumerate() {
                s += q.values()[i] * *x as f64;
            }
            (store.ids()[r].clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Random store; small integer coordinates when `ties` is set, so that
/// equal scores are common.
pub fn random_store<R: Rng>(rng: &mut R, n: usize, dim: usize, ties: bool) -> EmbeddingStore {
    let rows = (0..n).map(|i| {
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                if ties {
                    f64::from(rng.gen_range(-2i32..=2))
                } else {
                    f64::from(rng.gen_range(-1.0f32..1.0))
                }
            })
            .collect();
        (format!("d{i}"), EmbeddingVector::new(v).unwrap())
    });
    EmbeddingStore::build(dim, rows).unwrap()
}

pub fn random_query<R: Rng>(rng: &mut R, dim: usize, ties: bool) -> EmbeddingVector {
    let v = (0..dim)
        .map(|_| {
            if ties {
                f64::from(rng.gen_range(-2i32..=2))
            } else {
                rng.gen_range(-1.0..1.0)
            }
        })
        .collect();
    EmbeddingVector::new(v).unwrap()
}

pub struct MetricInstance {
    pub run: RankedList,
    pub qrels: Judgments,
    pub ranking: Vec<String>,
    pub grades: HashMap<String, u32>,
}

/// A shuffled candidate pool with partial graded judgments (including some
/// judged passages that were never retrieved) and at least one relevant.
pub fn random_instance<R: Rng>(rng: &mut R) -> MetricInstance {
    let pool = rng.gen_range(1..60);
    let retrieved = rng.gen_range(1..=pool);
    let mut ids: Vec<String> = (0..pool).map(|i| format!("p{i}")).collect();
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let ranking: Vec<String> = ids[..retrieved].to_vec();
    let mut grades = HashMap::new();
    for id in &ids {
        if rng.gen_bool(0.5) {
            grades.insert(id.clone(), rng.gen_range(0..=3));
        }
    }
    if !grades.values().any(|&g| g >= 1) {
        grades.insert(ids[rng.gen_range(0..pool)].clone(), rng.gen_range(1..=3));
    }
    let n = ranking.len();
    let run = RankedList::from_scores(
        "q",
        ranking
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), (n - i) as f64))
            .collect(),
    );
    let mut qrels = Judgments::new();
    for (id, g) in &grades {
        qrels.insert("q", id, *g).unwrap();
    }
    MetricInstance {
        run,
        qrels,
        ranking,
        grades,
    }
}

fn is_rel(grades: &HashMap<String, u32>, id: &str) -> bool {
    grades.get(id).is_some_and(|&g| g >= 1)
}

pub fn ref_ap(ranking: &[String], grades: &HashMap<String, u32>) -> f64 {
    let r = grades.values().filter(|&&g| g >= 1).count() as f64;
    let mut total = 0.0;
    for k in 1..=ranking.len() {
        if is_rel(grades, &ranking[k - 1]) {
            let rel_in_prefix = ranking[..k].iter().filter(|id| is_rel(grades, id)).count();
            total += rel_in_prefix as f64 / k as f64;
        }
    }
    total / r
}

pub fn ref_rr(ranking: &[String], grades: &HashMap<String, u32>) -> f64 {
    for (i, id) in ranking.iter().enumerate() {
        if is_rel(grades, id) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

pub fn ref_ndcg(ranking: &[String], grades: &HashMap<String, u32>, c: usize) -> f64 {
    let dcg_of = |gs: &[u32]| -> f64 {
        gs.iter()
            .take(c)
            .enumerate()
            .map(|(i, &g)| (2f64.powf(g as f64) - 1.0) / (i as f64 + 2.0).log2())
            .sum()
    };
    let actual: Vec<u32> = ranking.iter().map(|id| *grades.get(id).unwrap_or(&0)).collect();
    let mut best: Vec<u32> = grades.values().copied().collect();
    best.sort();
    best.reverse();
    let ideal = dcg_of(&best);
    if ideal == 0.0 {
        0.0
    } else {
        dcg_of(&actual) / ideal
    }
}

pub fn ref_recall(ranking: &[String], grades: &HashMap<String, u32>, d: usize) -> f64 {
    let r = grades.values().filter(|&&g| g >= 1).count() as f64;
    ranking.iter().take(d).filter(|id| is_rel(grades, id)).count() as f64 / r
}
