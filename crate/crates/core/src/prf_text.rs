//! Text-based feedback: turn the top-k feedback passages into one or more
//! expanded query strings, then fold the per-variant rankings back into a
//! single ranking.
//!
//! Three ways to build expanded queries:
//!
//! * concatenate-truncate: the query followed by every feedback passage, cut
//!   to [`MAX_QUERY_TOKENS`], giving one variant;
//! * concatenate-aggregate: one variant per feedback passage;
//! * sliding window: the feedback passages are joined and cut into
//!   overlapping windows, one variant per window.
//!
//! Tokens here are the lexical tokenizer's tokens, and the space separator
//! between query and passage text is implicit in the token boundary.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lexical::Tokenizer;
use crate::ranking::RankedList;

pub const MAX_QUERY_TOKENS: usize = 256;

/// Top-k feedback passages for one query, rank 1 first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSet {
    pub query_id: String,
    pub passages: Vec<(String, String)>,
}

impl FeedbackSet {
    pub fn depth(&self) -> usize {
        self.passages.len()
    }

    fn tokens(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.passages.iter().map(|(_, text)| Tokenizer.tokenize(text))
    }
}

/// One expanded query. Never longer than [`MAX_QUERY_TOKENS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrfTextQuery {
    pub query_id: String,
    pub variant_index: usize,
    pub tokens: Vec<String>,
}

impl PrfTextQuery {
    fn from_parts<'a>(query_id: &str, variant_index: usize, parts: impl IntoIterator<Item = &'a [String]>) -> Self {
        let tokens = parts.into_iter().flatten().take(MAX_QUERY_TOKENS).cloned().collect();
        Self {
            query_id: query_id.to_owned(),
            variant_index,
            tokens,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    window_size: usize,
    stride: usize,
}

impl WindowSpec {
    pub fn new(window_size: usize, stride: usize) -> Result<Self> {
        if window_size == 0 || stride == 0 || stride > window_size {
            return Err(Error::InvalidConfig(format!(
                "window spec needs 1 <= stride <= window, got window={window_size} stride={stride}"
            )));
        }
        Ok(Self { window_size, stride })
    }

    /// Average passage length as the window, half of it as the stride.
    pub fn for_collection(name: &str) -> Option<Self> {
        let (w, s) = match name.to_ascii_lowercase().as_str() {
            "dl19" | "dl2019" | "dl20" | "dl2020" | "dl-hard" | "dlhard" | "msmarco" => (65, 32),
            "cast19" | "cast2019" => (69, 34),
            "webap" => (75, 37),
            _ => return None,
        };
        Some(Self {
            window_size: w,
            stride: s,
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Window ranges over a sequence of `len` tokens. Windows start at
    /// multiples of the stride; the first window reaching the end is the last
    /// and may be shorter than `window_size`.
    pub fn partitions(&self, len: usize) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < len {
            let end = (start + self.window_size).min(len);
            out.push(start..end);
            if end == len {
                break;
            }
            start += self.stride;
        }
        out
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_size: 65,
            stride: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextHandling {
    ConcatTruncate,
    ConcatAggregate,
    SlidingWindow,
}

impl fmt::Display for TextHandling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextHandling::ConcatTruncate => "ct",
            TextHandling::ConcatAggregate => "ca",
            TextHandling::SlidingWindow => "sw",
        })
    }
}

impl FromStr for TextHandling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ct" => Ok(Self::ConcatTruncate),
            "ca" => Ok(Self::ConcatAggregate),
            "sw" => Ok(Self::SlidingWindow),
            other => Err(Error::InvalidConfig(format!("unknown text handling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationMethod {
    Average,
    Max,
    Borda,
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMethod::Average => "avg",
            AggregationMethod::Max => "max",
            AggregationMethod::Borda => "borda",
        })
    }
}

impl FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg" | "average" => Ok(Self::Average),
            "max" => Ok(Self::Max),
            "borda" => Ok(Self::Borda),
            other => Err(Error::InvalidConfig(format!("unknown aggregation {other:?}"))),
        }
    }
}

fn check_inputs(original: &[String], feedback: &FeedbackSet) -> Result<()> {
    if original.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if feedback.passages.is_empty() {
        return Err(Error::EmptyFeedback);
    }
    Ok(())
}

/// Query followed by all feedback passages, truncated to 256 tokens.
pub fn build_ct_query(original: &[String], feedback: &FeedbackSet) -> Result<PrfTextQuery> {
    check_inputs(original, feedback)?;
    let passages: Vec<Vec<String>> = feedback.tokens().collect();
    let parts = std::iter::once(original).chain(passages.iter().map(Vec::as_slice));
    Ok(PrfTextQuery::from_parts(&feedback.query_id, 0, parts))
}

/// One variant per feedback passage: query followed by passage `i`.
pub fn build_ca_queries(original: &[String], feedback: &FeedbackSet) -> Result<Vec<PrfTextQuery>> {
    check_inputs(original, feedback)?;
    Ok(feedback
        .tokens()
        .enumerate()
        .map(|(i, p)| PrfTextQuery::from_parts(&feedback.query_id, i, [original, p.as_slice()]))
        .collect())
}

/// One variant per sliding window over the joined feedback tokens.
pub fn build_sw_queries(original: &[String], feedback: &FeedbackSet, spec: WindowSpec) -> Result<Vec<PrfTextQuery>> {
    check_inputs(original, feedback)?;
    let joined: Vec<String> = feedback.tokens().flatten().collect();
    if joined.is_empty() {
        return Err(Error::EmptyFeedback);
    }
    Ok(spec
        .partitions(joined.len())
        .into_iter()
        .enumerate()
        .map(|(i, r)| PrfTextQuery::from_parts(&feedback.query_id, i, [original, &joined[r]]))
        .collect())
}

pub fn build_queries(
    handling: TextHandling,
    original: &[String],
    feedback: &FeedbackSet,
    window: WindowSpec,
) -> Result<Vec<PrfTextQuery>> {
    match handling {
        TextHandling::ConcatTruncate => build_ct_query(original, feedback).map(|q| vec![q]),
        TextHandling::ConcatAggregate => build_ca_queries(original, feedback),
        TextHandling::SlidingWindow => build_sw_queries(original, feedback, window),
    }
}

/// Per-candidate contributions, sorted so the fold does not depend on the
/// order of the input lists.
fn collect_contributions(
    lists: &[RankedList],
    contribution: impl Fn(&RankedList, usize, f64) -> f64,
) -> Result<(String, HashMap<String, Vec<f64>>)> {
    let first = lists.first().ok_or(Error::EmptyInput)?;
    let mut per_candidate: HashMap<String, Vec<f64>> = HashMap::new();
    for list in lists {
        if list.query_id != first.query_id {
            return Err(Error::InvalidConfig(format!(
                "cannot aggregate lists for different queries ({:?} vs {:?})",
                first.query_id, list.query_id
            )));
        }
        for e in list.entries() {
            per_candidate
                .entry(e.passage_id.clone())
                .or_default()
                .push(contribution(list, e.rank, e.score));
        }
    }
    for values in per_candidate.values_mut() {
        values.sort_by(f64::total_cmp);
    }
    Ok((first.query_id.clone(), per_candidate))
}

fn fold(
    lists: &[RankedList],
    contribution: impl Fn(&RankedList, usize, f64) -> f64,
    combine: impl Fn(&[f64]) -> f64,
) -> Result<RankedList> {
    let (query_id, per_candidate) = collect_contributions(lists, contribution)?;
    let scored = per_candidate
        .into_iter()
        .map(|(id, values)| {
            let s = combine(&values);
            (id, s)
        })
        .collect();
    Ok(RankedList::from_scores(query_id, scored))
}

/// Mean score over the lists that contain each candidate.
pub fn aggregate_average(lists: &[RankedList]) -> Result<RankedList> {
    fold(lists, |_, _, score| score, |v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate_max(lists: &[RankedList]) -> Result<RankedList> {
    fold(
        lists,
        |_, _, score| score,
        |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Borda count: each list gives `(n - rank + 1) / n` with its own `n`.
pub fn aggregate_borda(lists: &[RankedList]) -> Result<RankedList> {
    fold(
        lists,
        |list, rank, _| {
            let n = list.len() as f64;
            (n - rank as f64 + 1.0) / n
        },
        |v| v.iter().sum(),
    )
}

pub fn aggregate(method: AggregationMethod, lists: &[RankedList]) -> Result<RankedList> {
    match method {
        AggregationMethod::Average => aggregate_average(lists),
        AggregationMethod::Max => aggregate_max(lists),
        AggregationMethod::Borda => aggregate_borda(lists),
    }
}
