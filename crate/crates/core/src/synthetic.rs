//! Seeded synthetic benchmark: topical passages whose relevant set for a
//! query shares vocabulary beyond the query terms themselves.
//!
//! Every passage belongs to one topic and mixes words from that topic's
//! vocabulary with background words. A query is a few words from one
//! topic; the topic's passages are its relevant set, graded by how many
//! query words they contain. Many relevant passages contain none of the
//! query words, so they can only be reached through topic vocabulary that
//! feedback passages carry.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lexical::Query;
use crate::trec::Judgments;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub passages: usize,
    pub queries: usize,
    pub topics: usize,
    pub topic_vocab: usize,
    pub background_vocab: usize,
    pub min_passage_len: usize,
    pub max_passage_len: usize,
    /// Probability that a passage token comes from its topic.
    pub topic_fraction: f64,
    pub query_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            passages: 10_000,
            queries: 50,
            topics: 200,
            topic_vocab: 40,
            background_vocab: 5_000,
            min_passage_len: 40,
            max_passage_len: 60,
            topic_fraction: 0.35,
            query_len: 3,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub corpus: Vec<(String, String)>,
    pub queries: Vec<Query>,
    pub qrels: Judgments,
}

fn topic_word(topic: usize, i: usize) -> String {
    format!("t{topic}w{i}")
}

fn passage_id(i: usize, total: usize) -> String {
    let width = total.max(1).to_string().len();
    format!("p{i:0width$}")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticBenchmark> {
    let c = config;
    if c.topics == 0 || c.topic_vocab == 0 || c.background_vocab == 0 {
        return Err(Error::InvalidConfig("synthetic vocabularies must be non-empty".into()));
    }
    if c.queries > c.topics {
        return Err(Error::InvalidConfig(format!(
            "{} queries need at least as many topics (have {})",
            c.queries, c.topics
        )));
    }
    if c.query_len == 0 || c.query_len > c.topic_vocab {
        return Err(Error::InvalidConfig("query length must be in 1..=topic_vocab".into()));
    }
    if c.min_passage_len == 0 || c.min_passage_len > c.max_passage_len {
        return Err(Error::InvalidConfig("bad passage length range".into()));
    }
    if !(0.0..=1.0).contains(&c.topic_fraction) {
        return Err(Error::InvalidConfig("topic fraction must be in [0, 1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut corpus = Vec::with_capacity(c.passages);
    let mut passage_topics = Vec::with_capacity(c.passages);
    for i in 0..c.passages {
        let topic = rng.gen_range(0..c.topics);
        let len = rng.gen_range(c.min_passage_len..=c.max_passage_len);
        let words: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(c.topic_fraction) {
                    topic_word(topic, rng.gen_range(0..c.topic_vocab))
                } else {
                    format!("b{}", rng.gen_range(0..c.background_vocab))
                }
            })
            .collect();
        corpus.push((passage_id(i, c.passages), words.join(" ")));
        passage_topics.push(topic);
    }

    let mut topics: Vec<usize> = (0..c.topics).collect();
    topics.shuffle(&mut rng);
    let mut queries = Vec::with_capacity(c.queries);
    let mut qrels = Judgments::new();
    for (qi, &topic) in topics.iter().take(c.queries).enumerate() {
        let mut vocab: Vec<usize> = (0..c.topic_vocab).collect();
        vocab.shuffle(&mut rng);
        let words: Vec<String> = vocab[..c.query_len].iter().map(|&w| topic_word(topic, w)).collect();
        let qid = format!("q{qi:03}");
        for ((pid, text), &t) in corpus.iter().zip(&passage_topics) {
            if t != topic {
                continue;
            }
            let hits = words
                .iter()
                .filter(|w| text.split(' ').any(|tok| tok == w.as_str()))
                .count();
            let grade = 1 + u32::from(hits >= 1) + u32::from(hits >= 2);
            qrels.insert(&qid, pid, grade)?;
        }
        queries.push(Query {
            id: qid,
            text: words.join(" "),
        });
    }
    Ok(SyntheticBenchmark { corpus, queries, qrels })
}
