//! BM25 over an in-memory inverted index, plus the tab-separated corpus and
//! query file readers.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::RankedList;

/// Lowercases and splits on every non-alphanumeric character. No stemming,
/// no stopwords.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// Term postings keyed by document number. Document numbers follow
/// ascending passage id, so every postings list is id-sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl InvertedIndex {
    pub fn build<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let tokenizer = Tokenizer;
        let mut docs: Vec<(&str, Vec<String>)> = corpus
            .into_iter()
            .map(|(id, text)| (id, tokenizer.tokenize(text)))
            .collect();
        docs.sort_by(|a, b| a.0.cmp(b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.to_owned()));
        }

        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (doc, (_, tokens)) in docs.iter().enumerate() {
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_owned()).or_default().push((doc as u32, count));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Ok(Self {
            doc_ids: docs.into_iter().map(|(id, _)| id.to_owned()).collect(),
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(id))
            .ok()
            .map(|i| self.doc_lengths[i])
    }

    /// `(passage_id, term_frequency)` pairs for `term`, id-sorted.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings.get(term).map_or_else(Vec::new, |p| {
            p.iter()
                .map(|&(d, tf)| (self.doc_ids[d as usize].as_str(), tf))
                .collect()
        })
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `min(k, matching)` passages by BM25. Each query token occurrence
    /// contributes its full term score.
    pub fn bm25_search(&self, query_id: &str, query_text: &str, k: usize, params: Bm25Params) -> RankedList {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in Tokenizer.tokenize(query_text) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let len_norm =
                    1.0 - params.b + params.b * f64::from(self.doc_lengths[doc as usize]) / self.avg_doc_length;
                *acc.entry(doc).or_default() += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm);
            }
        }
        let scored = acc
            .into_iter()
            .map(|(doc, s)| (self.doc_ids[doc as usize].clone(), s))
            .collect();
        let mut list = RankedList::from_scores(query_id, scored);
        list.truncate(k);
        list
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::Format(e.to_string()))?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        serde_json::from_reader(file).map_err(|e| Error::Format(format!("lexical index: {e}")))
    }
}

/// Passage texts keyed by id, in file order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    ids: Vec<String>,
    texts: HashMap<String, String>,
}

impl Corpus {
    pub fn new(records: Vec<(String, String)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(records.len());
        let mut texts = HashMap::with_capacity(records.len());
        for (id, text) in records {
            if texts.contains_key(&id) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id.clone());
            texts.insert(id, text);
        }
        Ok(Self { ids, texts })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_tsv(path)?)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn text(&self, id: &str) -> Option<&str> {
        self.texts.get(id).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.ids.iter().map(|id| (id.as_str(), self.texts[id].as_str()))
    }

    /// Texts for `ids`, in request order.
    pub fn fetch_text(&self, ids: &[String]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|id| self.text(id).ok_or_else(|| Error::UnknownId(id.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub text: String,
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let records = read_tsv(path)?;
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .map(|(id, text)| {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            Ok(Query { id, text })
        })
        .collect()
}

/// Reads `<id>\t<text>` lines. Blank lines are skipped; a second tab on a
/// line is an error.
pub fn read_tsv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: &str| Error::Parse {
            line: i + 1,
            message: message.to_owned(),
        };
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected <id>\\t<text>"))?;
        if id.is_empty() {
            return Err(parse_err("empty id"));
        }
        if text.contains('\t') {
            return Err(parse_err("tab inside text"));
        }
        records.push((id.to_owned(), text.to_owned()));
    }
    Ok(records)
}

pub fn write_tsv<'a, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut out = BufWriter::new(File::create(path)?);
    for (id, text) in records {
        writeln!(out, "{id}\t{text}")?;
    }
    out.flush()?;
    Ok(())
}
