//! TREC run and qrels files.
//!
//! Run lines: `query_id Q0 passage_id rank score run_tag`, score with six
//! decimals. Qrels lines: `query_id 0 passage_id grade`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ranking::RankedList;

/// Graded judgments: query id -> passage id -> grade.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Judgments {
    queries: BTreeMap<String, HashMap<String, u32>>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one judgment; judging the same pair twice is an error.
    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) -> Result<()> {
        let q = self.queries.entry(query_id.to_owned()).or_default();
        if q.insert(passage_id.to_owned(), grade).is_some() {
            return Err(Error::Format(format!("({query_id}, {passage_id}) judged twice")));
        }
        Ok(())
    }

    pub fn query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.queries.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

pub fn write_run<W: Write>(mut out: W, runs: &[RankedList], tag: &str) -> Result<()> {
    let mut sorted: Vec<&RankedList> = runs.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for list in sorted {
        for e in list.entries() {
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                list.query_id, e.passage_id, e.rank, e.score, tag
            )?;
        }
    }
    Ok(())
}

pub fn save_run(path: impl AsRef<Path>, runs: &[RankedList], tag: &str) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_run(&mut out, runs, tag)?;
    out.flush()?;
    Ok(())
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    parse_run(BufReader::new(File::open(path)?))
}

/// Parses a run. Entries are ordered by score, keeping the file's rank order
/// among equal scores; a warning is logged when a lower-ranked entry has a
/// strictly higher score than one above it.
pub fn parse_run<R: BufRead>(reader: R) -> Result<Vec<RankedList>> {
    let mut per_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: lineno, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| err(format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| err(format!("bad score {:?}", fields[4])))?;
        if !seen.insert((fields[0].to_owned(), fields[2].to_owned())) {
            return Err(err(format!(
                "passage {:?} listed twice for query {:?}",
                fields[2], fields[0]
            )));
        }
        per_query
            .entry(fields[0].to_owned())
            .or_default()
            .push((rank, fields[2].to_owned(), score));
    }

    Ok(per_query
        .into_iter()
        .map(|(qid, mut entries)| {
            entries.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            if entries.windows(2).any(|w| w[1].2 > w[0].2) {
                log::warn!("run for query {qid}: file ranks disagree with scores; re-sorted by score");
                // Stable: equal scores keep rank order.
                entries.sort_by(|a, b| b.2.total_cmp(&a.2));
            }
            RankedList::from_ordered(qid, entries.into_iter().map(|(_, p, s)| (p, s)).collect())
        })
        .collect())
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Judgments> {
    parse_qrels(BufReader::new(File::open(path)?))
}

pub fn parse_qrels<R: BufRead>(reader: R) -> Result<Judgments> {
    let mut judgments = Judgments::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: lineno, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: u32 = fields[3]
            .parse()
            .map_err(|_| err(format!("grade must be a non-negative integer, got {:?}", fields[3])))?;
        judgments
            .insert(fields[0], fields[2], grade)
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(judgments)
}

pub fn write_qrels<W: Write>(mut out: W, judgments: &Judgments) -> Result<()> {
    for qid in judgments.query_ids() {
        let mut judged: Vec<(&String, &u32)> = judgments.query(qid).into_iter().flatten().collect();
        judged.sort();
        for (pid, grade) in judged {
            writeln!(out, "{qid} 0 {pid} {grade}")?;
        }
    }
    Ok(())
}
