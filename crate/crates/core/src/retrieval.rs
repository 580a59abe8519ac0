//! First-pass dense retrieval, feedback re-encoding and the second pass.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bm25::Bm25Index;
use crate::data::{DocumentRecord, QueryRecord};
use crate::encoder::{split_words, Encoder, EncoderError, Vocabulary};
use crate::index::{FlatIndex, IndexError, ScoredHit};
use crate::run::RunList;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("{id}: {source}")]
    Encoder { id: String, source: EncoderError },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("document `{0}` is in the index but not in the corpus")]
    UnknownDoc(String),
    #[error("k = {k} exceeds first_pass_depth = {depth}")]
    DepthTooSmall { k: usize, depth: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrfConfig {
    pub k: usize,
    pub first_pass_depth: usize,
    pub final_depth: usize,
}

impl Default for PrfConfig {
    fn default() -> Self {
        Self { k: 3, first_pass_depth: 1000, final_depth: 1000 }
    }
}

impl PrfConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.first_pass_depth == 0 {
            errs.push("prf.first_pass_depth must be positive".into());
        }
        if self.final_depth == 0 {
            errs.push("prf.final_depth must be positive".into());
        }
        if self.k > self.first_pass_depth {
            errs.push(format!("prf.k ({}) must not exceed prf.first_pass_depth ({})", self.k, self.first_pass_depth));
        }
        errs
    }
}

/// Encoder-call and index-search tallies.
#[derive(Debug, Default)]
pub struct Counters {
    encoder_calls: AtomicU64,
    index_searches: AtomicU64,
    queries: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CounterSnapshot {
    pub encoder_calls: u64,
    pub index_searches: u64,
    pub queries: u64,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            encoder_calls: self.encoder_calls.load(Ordering::Relaxed),
            index_searches: self.index_searches.load(Ordering::Relaxed),
            queries: self.queries.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.encoder_calls.store(0, Ordering::Relaxed);
        self.index_searches.store(0, Ordering::Relaxed);
        self.queries.store(0, Ordering::Relaxed);
    }

    fn encode(&self) {
        self.encoder_calls.fetch_add(1, Ordering::Relaxed);
    }

    fn search(&self) {
        self.index_searches.fetch_add(1, Ordering::Relaxed);
    }
}

/// Tokenized corpus keyed by document id.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    tokens: HashMap<String, Vec<u32>>,
}

impl DocStore {
    pub fn new(corpus: &[DocumentRecord], vocab: &Vocabulary) -> Self {
        let tokens = corpus.iter().map(|d| (d.id.clone(), vocab.tokenize(&d.text))).collect();
        Self { tokens }
    }

    pub fn get(&self, doc_id: &str) -> Option<&[u32]> {
        self.tokens.get(doc_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token ids of the given documents, in order.
    pub fn feedback(&self, hits: &[ScoredHit]) -> Result<Vec<Vec<u32>>, RetrievalError> {
        hits.iter()
            .map(|h| self.get(&h.doc_id).map(<[u32]>::to_vec).ok_or_else(|| RetrievalError::UnknownDoc(h.doc_id.clone())))
            .collect()
    }
}

/// Shared read-only state for dense retrieval.
pub struct Retriever<'a> {
    pub vocab: &'a Vocabulary,
    pub index: &'a FlatIndex,
    pub docs: &'a DocStore,
    pub counters: Counters,
}

/// Result of one feedback retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct PrfOutcome {
    /// Empty when `k = 0` (the first pass is skipped).
    pub first_pass: Vec<ScoredHit>,
    pub hits: Vec<ScoredHit>,
}

impl<'a> Retriever<'a> {
    pub fn new(vocab: &'a Vocabulary, index: &'a FlatIndex, docs: &'a DocStore) -> Self {
        Self { vocab, index, docs, counters: Counters::default() }
    }

    /// Encodes the query with `encoder` and searches at `depth`.
    pub fn first_pass(&self, qid: &str, text: &str, encoder: &Encoder, depth: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
        self.counters.queries.fetch_add(1, Ordering::Relaxed);
        self.search_query(qid, text, encoder, depth)
    }

    fn search_query(&self, qid: &str, text: &str, encoder: &Encoder, depth: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
        let q = encoder.encode_query(&self.vocab.tokenize(text)).map_err(enc_err(qid))?;
        self.counters.encode();
        let hits = self.index.search(&q, depth)?;
        self.counters.search();
        Ok(hits)
    }

    /// Second pass given first-pass hits: top-k texts are fed with the query
    /// to `prf` and the result searched at `final_depth`.
    pub fn second_pass(
        &self,
        qid: &str,
        text: &str,
        first_pass: &[ScoredHit],
        prf: &Encoder,
        config: &PrfConfig,
    ) -> Result<Vec<ScoredHit>, RetrievalError> {
        let feedback = self.docs.feedback(&first_pass[..config.k.min(first_pass.len())])?;
        let q = prf.encode_prf(&self.vocab.tokenize(text), &feedback).map_err(enc_err(qid))?;
        self.counters.encode();
        let hits = self.index.search(&q, config.final_depth)?;
        self.counters.search();
        Ok(hits)
    }

    /// Full feedback retrieval for one query.
    pub fn prf_retrieve(
        &self,
        qid: &str,
        text: &str,
        prf: &Encoder,
        baseline: &Encoder,
        config: &PrfConfig,
    ) -> Result<PrfOutcome, RetrievalError> {
        if config.k > config.first_pass_depth {
            return Err(RetrievalError::DepthTooSmall { k: config.k, depth: config.first_pass_depth });
        }
        self.counters.queries.fetch_add(1, Ordering::Relaxed);
        let first_pass = if config.k == 0 {
            Vec::new()
        } else {
            self.search_query(qid, text, baseline, config.first_pass_depth)?
        };
        let hits = self.second_pass(qid, text, &first_pass, prf, config)?;
        Ok(PrfOutcome { first_pass, hits })
    }

    /// First-pass run over all queries, in input order.
    pub fn run_first_pass(&self, queries: &[QueryRecord], encoder: &Encoder, depth: usize, tag: &str) -> Result<RunList, RetrievalError> {
        let results: Vec<Vec<ScoredHit>> = queries
            .par_iter()
            .map(|q| self.first_pass(&q.id, &q.text, encoder, depth))
            .collect::<Result<_, _>>()?;
        Ok(assemble(queries, results, tag))
    }

    /// Feedback run over all queries, in input order.
    pub fn run_prf(
        &self,
        queries: &[QueryRecord],
        prf: &Encoder,
        baseline: &Encoder,
        config: &PrfConfig,
        tag: &str,
    ) -> Result<RunList, RetrievalError> {
        let results: Vec<Vec<ScoredHit>> = queries
            .par_iter()
            .map(|q| self.prf_retrieve(&q.id, &q.text, prf, baseline, config).map(|o| o.hits))
            .collect::<Result<_, _>>()?;
        Ok(assemble(queries, results, tag))
    }

    /// Feedback run reusing an existing first-pass run.
    pub fn run_second_pass(
        &self,
        queries: &[QueryRecord],
        first_pass: &RunList,
        prf: &Encoder,
        config: &PrfConfig,
        tag: &str,
    ) -> Result<RunList, RetrievalError> {
        let results: Vec<Vec<ScoredHit>> = queries
            .par_iter()
            .map(|q| {
                let fp = first_pass.hits(&q.id).unwrap_or(&[]);
                self.second_pass(&q.id, &q.text, fp, prf, config)
            })
            .collect::<Result<_, _>>()?;
        Ok(assemble(queries, results, tag))
    }
}

fn assemble(queries: &[QueryRecord], results: Vec<Vec<ScoredHit>>, tag: &str) -> RunList {
    let mut run = RunList::new(tag);
    for (q, hits) in queries.iter().zip(results) {
        run.push(q.id.clone(), hits);
    }
    run
}

/// Run tag for a feedback run; evaluating at a depth other than the trained
/// one is marked.
pub fn prf_tag(k: usize, trained_k: usize) -> String {
    if k == trained_k {
        format!("prf-k{k}")
    } else {
        format!("prf-k{k}-trained-k{trained_k}")
    }
}

/// Lexical baseline run.
pub fn run_bm25(queries: &[QueryRecord], corpus: &[DocumentRecord], depth: usize, tag: &str) -> RunList {
    let index = Bm25Index::build(corpus.iter().map(|d| (d.id.as_str(), split_words(&d.text))));
    let results = queries.par_iter().map(|q| index.search(&split_words(&q.text), depth)).collect();
    assemble(queries, results, tag)
}

/// Builds the document index by encoding every corpus document.
pub fn build_index(corpus: &[DocumentRecord], encoder: &Encoder, vocab: &Vocabulary) -> Result<FlatIndex, RetrievalError> {
    let embs = corpus
        .par_iter()
        .map(|d| {
            encoder
                .encode_doc(&vocab.tokenize(&d.text))
                .map(|e| (d.id.as_str(), e))
                .map_err(enc_err(&d.id))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FlatIndex::build(embs)?)
}

fn enc_err(id: &str) -> impl FnOnce(EncoderError) -> RetrievalError + '_ {
    move |source| RetrievalError::Encoder { id: id.to_string(), source }
}
