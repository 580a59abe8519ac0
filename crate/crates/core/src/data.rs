//! Corpus, query and qrels files, plus the seeded synthetic benchmark.
//!
//! Corpus and query files are `id<TAB>text` per line. Qrels use the TREC
//! `qid 0 docid grade` layout.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalError, Qrels};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file} line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("invalid synthetic spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("word pool exhausted: {0}")]
    PoolExhausted(String),
    #[error(transparent)]
    Qrels(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
}

fn parse_tsv(text: &str, file: &str) -> Result<Vec<(String, String)>, DataError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| DataError::Parse { file: file.to_string(), line: i + 1, msg: msg.to_string() };
        let (id, body) = line.split_once('\t').ok_or_else(|| err("expected `id<TAB>text`"))?;
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(err("id must be non-empty and contain no whitespace"));
        }
        if !seen.insert(id.to_string()) {
            return Err(err(&format!("duplicate id `{id}`")));
        }
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

pub fn parse_corpus(text: &str) -> Result<Vec<DocumentRecord>, DataError> {
    Ok(parse_tsv(text, "corpus")?.into_iter().map(|(id, text)| DocumentRecord { id, text }).collect())
}

pub fn parse_queries(text: &str) -> Result<Vec<QueryRecord>, DataError> {
    Ok(parse_tsv(text, "queries")?.into_iter().map(|(id, text)| QueryRecord { id, text }).collect())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DocumentRecord>, DataError> {
    let p = path.as_ref();
    let text = fs::read_to_string(p).map_err(io_err(p))?;
    parse_tsv(&text, &p.display().to_string())
        .map(|v| v.into_iter().map(|(id, text)| DocumentRecord { id, text }).collect())
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>, DataError> {
    let p = path.as_ref();
    let text = fs::read_to_string(p).map_err(io_err(p))?;
    parse_tsv(&text, &p.display().to_string())
        .map(|v| v.into_iter().map(|(id, text)| QueryRecord { id, text }).collect())
}

/// Loads qrels; repeated pairs keep the highest grade and are logged.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels, DataError> {
    let p = path.as_ref();
    let text = fs::read_to_string(p).map_err(io_err(p))?;
    let (qrels, warnings) = Qrels::parse(&text)?;
    for w in warnings {
        log::warn!("{}: {w}", p.display());
    }
    Ok(qrels)
}

fn tsv<'a>(rows: impl Iterator<Item = (&'a str, &'a str)>) -> String {
    rows.map(|(id, text)| format!("{id}\t{text}\n")).collect()
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[DocumentRecord]) -> Result<(), DataError> {
    let p = path.as_ref();
    fs::write(p, tsv(docs.iter().map(|d| (d.id.as_str(), d.text.as_str())))).map_err(io_err(p))
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[QueryRecord]) -> Result<(), DataError> {
    let p = path.as_ref();
    fs::write(p, tsv(queries.iter().map(|q| (q.id.as_str(), q.text.as_str())))).map_err(io_err(p))
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<(), DataError> {
    let p = path.as_ref();
    fs::write(p, qrels.to_trec_string()).map_err(io_err(p))
}

/// Parameters of the synthetic topic-model benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_topics: usize,
    pub docs_per_topic: usize,
    /// Words specific to each topic.
    pub topic_vocab: usize,
    /// Topics per group. Topics in a group share `shared_vocab` words.
    pub group_size: usize,
    /// Words in each group's shared pool. A topic's pool is its group's
    /// shared words plus its specific words.
    pub shared_vocab: usize,
    /// Words in the pool shared by all topics.
    pub noise_vocab: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    pub query_len: usize,
    /// Probability that a core document's word comes from its topic pool.
    pub p_topic: f64,
    /// Fraction of documents that are fringe (topic probability halved).
    pub fringe_fraction: f64,
    /// Same-topic documents judged per query; 0 judges all of them.
    pub relevant_per_query: usize,
    pub train_queries: usize,
    pub dev_queries: usize,
    pub test_queries: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_topics: 32,
            docs_per_topic: 62,
            topic_vocab: 60,
            group_size: 1,
            shared_vocab: 0,
            noise_vocab: 400,
            doc_len_min: 10,
            doc_len_max: 16,
            query_len: 3,
            p_topic: 0.6,
            fringe_fraction: 0.3,
            relevant_per_query: 0,
            train_queries: 64,
            dev_queries: 32,
            test_queries: 32,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("num_topics", self.num_topics),
            ("docs_per_topic", self.docs_per_topic),
            ("topic_vocab", self.topic_vocab),
            ("group_size", self.group_size),
            ("noise_vocab", self.noise_vocab),
            ("doc_len_min", self.doc_len_min),
            ("query_len", self.query_len),
            ("train_queries", self.train_queries),
            ("dev_queries", self.dev_queries),
            ("test_queries", self.test_queries),
        ] {
            if v == 0 {
                errs.push(format!("synthetic.{name} must be positive"));
            }
        }
        if self.doc_len_max < self.doc_len_min {
            errs.push("synthetic.doc_len_max must be >= doc_len_min".into());
        }
        for (name, p) in [("p_topic", self.p_topic), ("fringe_fraction", self.fringe_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("synthetic.{name} must lie in [0, 1]"));
            }
        }
        errs
    }

    pub fn num_docs(&self) -> usize {
        self.num_topics * self.docs_per_topic
    }

    pub fn pool_size(&self) -> usize {
        self.topic_vocab + self.shared_vocab
    }

    /// Word `i` of a topic's pool; shared words come first.
    pub fn pool_word(&self, topic: usize, i: usize) -> String {
        if i < self.shared_vocab {
            group_word(topic / self.group_size, i)
        } else {
            topic_word(topic, i - self.shared_vocab)
        }
    }
}

/// A generated benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<DocumentRecord>,
    pub train: Vec<QueryRecord>,
    pub dev: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
    pub qrels: Qrels,
    /// Topic of each document, parallel to `corpus`.
    pub doc_topics: Vec<usize>,
}

pub fn topic_word(topic: usize, i: usize) -> String {
    format!("t{topic:02}_w{i:03}")
}

pub fn group_word(group: usize, i: usize) -> String {
    format!("g{group:02}_w{i:03}")
}

pub fn noise_word(i: usize) -> String {
    format!("noise_w{i:03}")
}

/// Generates corpus, queries and graded qrels from `spec`.
///
/// Documents are assigned topics round-robin; the first document of every
/// topic is core, later ones are fringe with probability `fringe_fraction`.
/// Each word is drawn uniformly from the topic pool with probability
/// `p_topic` (halved for fringe documents), otherwise from the noise pool.
/// Queries draw `query_len` distinct words from the pool of a uniformly chosen
/// topic. Core documents of the query topic get grade 2, fringe documents
/// grade 1. Other topics of the same group stay unjudged.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(DataError::InvalidSpec(errs));
    }
    if spec.query_len > spec.pool_size() {
        return Err(DataError::PoolExhausted(format!(
            "query_len {} exceeds the topic pool of {} words",
            spec.query_len,
            spec.pool_size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t = spec.num_topics;
    let n_docs = spec.num_docs();

    let mut corpus = Vec::with_capacity(n_docs);
    let mut doc_topics = Vec::with_capacity(n_docs);
    let mut fringe = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let topic = i % t;
        let is_fringe = i >= t && rng.random_bool(spec.fringe_fraction);
        let p = if is_fringe { spec.p_topic / 2.0 } else { spec.p_topic };
        let len = rng.random_range(spec.doc_len_min..=spec.doc_len_max);
        let words: Vec<String> = (0..len)
            .map(|_| {
                if rng.random_bool(p) {
                    spec.pool_word(topic, rng.random_range(0..spec.pool_size()))
                } else {
                    noise_word(rng.random_range(0..spec.noise_vocab))
                }
            })
            .collect();
        corpus.push(DocumentRecord { id: format!("d{i:05}"), text: words.join(" ") });
        doc_topics.push(topic);
        fringe.push(is_fringe);
    }

    let total_q = spec.train_queries + spec.dev_queries + spec.test_queries;
    let mut queries = Vec::with_capacity(total_q);
    let mut query_topics = Vec::with_capacity(total_q);
    for i in 0..total_q {
        let topic = rng.random_range(0..t);
        let words: Vec<String> = index::sample(&mut rng, spec.pool_size(), spec.query_len)
            .into_iter()
            .map(|w| spec.pool_word(topic, w))
            .collect();
        queries.push(QueryRecord { id: format!("q{i:04}"), text: words.join(" ") });
        query_topics.push(topic);
    }

    let mut qrels = Qrels::new();
    for (q, &topic) in queries.iter().zip(&query_topics) {
        let same: Vec<usize> = (topic..n_docs).step_by(t).collect();
        let judged: Vec<usize> = if spec.relevant_per_query == 0 || spec.relevant_per_query >= same.len() {
            same
        } else {
            // the topic's first document is always core and always judged
            let mut pick: Vec<usize> = index::sample(&mut rng, same.len() - 1, spec.relevant_per_query - 1)
                .into_iter()
                .map(|j| same[j + 1])
                .collect();
            pick.push(same[0]);
            pick.sort_unstable();
            pick
        };
        for d in judged {
            qrels.insert(&q.id, &corpus[d].id, if fringe[d] { 1 } else { 2 });
        }
    }

    let dev_start = spec.train_queries;
    let test_start = dev_start + spec.dev_queries;
    Ok(SyntheticData {
        train: queries[..dev_start].to_vec(),
        dev: queries[dev_start..test_start].to_vec(),
        test: queries[test_start..].to_vec(),
        corpus,
        qrels,
        doc_topics,
    })
}

/// File names used for a benchmark directory.
pub struct DataFiles;

impl DataFiles {
    pub const CORPUS: &'static str = "corpus.tsv";
    pub const TRAIN: &'static str = "queries.train.tsv";
    pub const DEV: &'static str = "queries.dev.tsv";
    pub const TEST: &'static str = "queries.test.tsv";
    pub const QRELS: &'static str = "qrels.txt";
}

impl SyntheticData {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), DataError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_corpus(dir.join(DataFiles::CORPUS), &self.corpus)?;
        write_queries(dir.join(DataFiles::TRAIN), &self.train)?;
        write_queries(dir.join(DataFiles::DEV), &self.dev)?;
        write_queries(dir.join(DataFiles::TEST), &self.test)?;
        write_qrels(dir.join(DataFiles::QRELS), &self.qrels)
    }
}
