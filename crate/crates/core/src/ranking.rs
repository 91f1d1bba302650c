//! Scored, ranked candidate lists shared by every retrieval stage.

use std::cmp::Ordering;

/// One passage in a ranked list. `rank` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

/// An ordered list of scored passages for a single query.
///
/// Ranks are contiguous from 1, scores are non-increasing, and passage ids
/// are unique. Lists built from scores break ties by ascending passage id;
/// lists read from run files keep the file's order among equal scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    entries: Vec<ScoredPassage>,
}

/// Descending score, then ascending id. Scores are assumed finite.
pub fn score_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Sorts `scored` by the canonical order and assigns ranks.
    ///
    /// Callers guarantee ids are unique; duplicates are a logic error upstream.
    pub fn from_scores(query_id: impl Into<String>, mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| score_order((&a.0, a.1), (&b.0, b.1)));
        debug_assert!(
            scored.windows(2).all(|w| w[0].0 != w[1].0) || scored.len() < 2,
            "duplicate passage ids in ranked list"
        );
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (passage_id, score))| ScoredPassage {
                passage_id,
                score,
                rank: i + 1,
            })
            .collect();
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    /// Assigns ranks in the given order, which must have non-increasing scores.
    pub(crate) fn from_ordered(query_id: impl Into<String>, ordered: Vec<(String, f64)>) -> Self {
        debug_assert!(ordered.windows(2).all(|w| w[0].1 >= w[1].1));
        let entries = ordered
            .into_iter()
            .enumerate()
            .map(|(i, (passage_id, score))| ScoredPassage {
                passage_id,
                score,
                rank: i + 1,
            })
            .collect();
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    /// Keeps only the first `k` entries.
    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn entries(&self) -> &[ScoredPassage] {
        &self.entries
    }

    /// Candidate count, the `n` of rank-based fusion.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    /// Ids of the first `min(k, n)` entries in rank order.
    pub fn top_ids(&self, k: usize) -> Vec<String> {
        self.entries.iter().take(k).map(|e| e.passage_id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_are_contiguous_and_ties_break_by_id() {
        let list = RankedList::from_scores(
            "q",
            vec![
                ("b".into(), 1.0),
                ("a".into(), 1.0),
                ("c".into(), 3.0),
                ("d".into(), -2.0),
            ],
        );
        let ids: Vec<_> = list.ids().collect();
        assert_eq!(ids, ["c", "a", "b", "d"]);
        let ranks: Vec<_> = list.entries().iter().map(|e| e.rank).collect();
        assert_eq!(ranks, [1, 2, 3, 4]);
    }

    #[test]
    fn top_ids_clamps() {
        let list = RankedList::from_scores("q", vec![("a".into(), 1.0)]);
        assert_eq!(list.top_ids(10), ["a"]);
    }
}
