//! Diagnostics for the feedback encoder: `[CLS]` attention by input group,
//! embedding geometry, token highlighting and the depth ablation table.

mod ablation;
mod attention;
mod highlight;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablation::{ablation_csv, ablation_table, depth_ablation, AblationRow};
pub use attention::{group_attention, relevance_threshold, summarize_attention, AttentionSummary, GroupAttention, PositionAttention};
pub use highlight::{highlight_html, highlight_terms, HighlightToken};

use crate::data::QueryRecord;
use crate::encoder::{Encoder, EncoderError, EncoderParams, PrfInput};
use crate::eval::Qrels;
use crate::index::{FlatIndex, IndexError};
use crate::retrieval::{DocStore, RetrievalError};
use crate::run::RunList;
use crate::Vocabulary;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("misaligned input: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("document `{0}` missing from the index")]
    MissingEmbedding(String),
}

/// Feedback input of one query built from the top-k of its first-pass run.
pub fn feedback_input(
    query: &QueryRecord,
    first_pass: &RunList,
    k: usize,
    encoder: &Encoder,
    vocab: &Vocabulary,
    docs: &DocStore,
) -> Result<(PrfInput, Vec<String>), AnalysisError> {
    let hits = first_pass.hits(&query.id).unwrap_or(&[]);
    let top = &hits[..k.min(hits.len())];
    let feedback = docs.feedback(top)?;
    let input = encoder.layout.prf_input(&vocab.tokenize(&query.text), &feedback)?;
    Ok((input, top.iter().map(|h| h.doc_id.clone()).collect()))
}

/// Group attention of `prf` for every query.
pub fn attention_records(
    prf: &Encoder,
    queries: &[QueryRecord],
    first_pass: &RunList,
    k: usize,
    vocab: &Vocabulary,
    docs: &DocStore,
    qrels: &Qrels,
) -> Result<Vec<GroupAttention>, AnalysisError> {
    let threshold = relevance_threshold(qrels);
    queries
        .iter()
        .map(|q| {
            let (input, ids) = feedback_input(q, first_pass, k, prf, vocab, docs)?;
            let attn = prf.params.cls_attention(&input.seq)?;
            group_attention(&q.id, &attn, &input, &ids, qrels, threshold)
        })
        .collect()
}

/// Mean dot products of the feedback query embedding at one training step.
///
/// Relevant and irrelevant documents are the first-pass top `GEOMETRY_DEPTH`
/// split into judged relevant (any positive grade) and the rest, which are
/// the same population the feedback phase samples negatives from. Per-query
/// means are averaged over the queries that have at least one document in
/// the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub step: usize,
    pub queries: usize,
    pub query: f64,
    pub relevant: Option<f64>,
    pub irrelevant: Option<f64>,
}

pub const GEOMETRY_DEPTH: usize = 100;

#[allow(clippy::too_many_arguments)]
pub fn geometry_at(
    step: usize,
    prf: &Encoder,
    baseline: &Encoder,
    queries: &[QueryRecord],
    first_pass: &RunList,
    k: usize,
    index: &FlatIndex,
    vocab: &Vocabulary,
    docs: &DocStore,
    qrels: &Qrels,
) -> Result<GeometryRecord, AnalysisError> {
    let (mut q_sum, mut rel, mut irr) = (0.0, Vec::new(), Vec::new());
    for q in queries {
        let (input, _) = feedback_input(q, first_pass, k, prf, vocab, docs)?;
        let q_prf = prf.params.encode(&input.seq)?;
        let q_orig = baseline.encode_query(&vocab.tokenize(&q.text))?;
        q_sum += q_prf.dot(&q_orig);
        let (mut r, mut i) = (Vec::new(), Vec::new());
        for h in first_pass.hits(&q.id).unwrap_or(&[]).iter().take(GEOMETRY_DEPTH) {
            let e = index.embedding(&h.doc_id).ok_or_else(|| AnalysisError::MissingEmbedding(h.doc_id.clone()))?;
            let s = q_prf.dot(&e);
            if qrels.grade_or_zero(&q.id, &h.doc_id) >= 1 {
                r.push(s);
            } else {
                i.push(s);
            }
        }
        if !r.is_empty() {
            rel.push(r.iter().sum::<f64>() / r.len() as f64);
        }
        if !i.is_empty() {
            irr.push(i.iter().sum::<f64>() / i.len() as f64);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(GeometryRecord {
        step,
        queries: queries.len(),
        query: if queries.is_empty() { 0.0 } else { q_sum / queries.len() as f64 },
        relevant: mean(&rel),
        irrelevant: mean(&irr),
    })
}

/// Geometry over a series of saved checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn embedding_geometry(
    checkpoints: &[(usize, EncoderParams)],
    baseline: &Encoder,
    queries: &[QueryRecord],
    first_pass: &RunList,
    k: usize,
    index: &FlatIndex,
    vocab: &Vocabulary,
    docs: &DocStore,
    qrels: &Qrels,
) -> Result<Vec<GeometryRecord>, AnalysisError> {
    checkpoints
        .iter()
        .map(|(step, params)| {
            let prf = Encoder::new(params.clone(), vocab);
            geometry_at(*step, &prf, baseline, queries, first_pass, k, index, vocab, docs, qrels)
        })
        .collect()
}
