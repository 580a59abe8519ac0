use serde::{Deserialize, Serialize};

use crate::encoder::PrfInput;
use crate::eval::Qrels;

use super::AnalysisError;

/// Grade at or above which a feedback document counts as relevant: 1 for
/// binary judgments, 2 when the qrels carry graded labels.
pub fn relevance_threshold(qrels: &Qrels) -> u32 {
    if qrels.max_grade() >= 2 {
        2
    } else {
        1
    }
}

/// Attention to one feedback document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionAttention {
    pub rank: usize,
    pub doc_id: String,
    pub grade: Option<u32>,
    pub relevant: bool,
    pub unjudged: bool,
    pub tokens: usize,
    pub mass: f64,
    /// Mass per token; 0 for an empty span.
    pub mean: f64,
}

/// `[CLS]` attention of one query split by input group.
///
/// Masses are span sums; means divide by the group's token count and are
/// `None` for an empty group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAttention {
    pub query_id: String,
    pub total: f64,
    pub special_mass: f64,
    pub query_mass: f64,
    pub query_mean: Option<f64>,
    pub all_docs_mass: f64,
    pub all_docs_mean: Option<f64>,
    pub relevant_mass: f64,
    pub relevant_mean: Option<f64>,
    pub irrelevant_mass: f64,
    pub irrelevant_mean: Option<f64>,
    pub positions: Vec<PositionAttention>,
}

fn mean(mass: f64, tokens: usize) -> Option<f64> {
    (tokens > 0).then(|| mass / tokens as f64)
}

/// Splits per-position `[CLS]` attention over the spans of `input`.
pub fn group_attention(
    query_id: &str,
    attn: &[f64],
    input: &PrfInput,
    doc_ids: &[String],
    qrels: &Qrels,
    threshold: u32,
) -> Result<GroupAttention, AnalysisError> {
    let real = input.seq.real_len();
    if attn.len() < real || doc_ids.len() != input.k() {
        return Err(AnalysisError::Misaligned(format!(
            "{} attention weights and {} doc ids for {} real tokens and {} spans",
            attn.len(),
            doc_ids.len(),
            real,
            input.k()
        )));
    }
    let span_ok = |r: &std::ops::Range<usize>| r.start <= r.end && r.end <= real;
    if !span_ok(&input.query_span) || !input.doc_spans.iter().all(span_ok) {
        return Err(AnalysisError::Misaligned("span outside the real tokens".into()));
    }
    let sum = |r: &std::ops::Range<usize>| attn[r.clone()].iter().sum::<f64>();
    let total: f64 = attn[..real].iter().sum();
    let query_mass = sum(&input.query_span);

    let mut positions = Vec::with_capacity(input.k());
    let (mut rel_mass, mut rel_tok, mut irr_mass, mut irr_tok) = (0.0, 0, 0.0, 0);
    for (i, (span, doc_id)) in input.doc_spans.iter().zip(doc_ids).enumerate() {
        let grade = qrels.grade(query_id, doc_id);
        let relevant = grade.is_some_and(|g| g >= threshold);
        let mass = sum(span);
        let tokens = span.len();
        if relevant {
            rel_mass += mass;
            rel_tok += tokens;
        } else {
            irr_mass += mass;
            irr_tok += tokens;
        }
        positions.push(PositionAttention {
            rank: i + 1,
            doc_id: doc_id.clone(),
            grade,
            relevant,
            unjudged: grade.is_none(),
            tokens,
            mass,
            mean: mean(mass, tokens).unwrap_or(0.0),
        });
    }
    let all_docs_mass = rel_mass + irr_mass;
    Ok(GroupAttention {
        query_id: query_id.to_string(),
        total,
        special_mass: total - query_mass - all_docs_mass,
        query_mass,
        query_mean: mean(query_mass, input.query_span.len()),
        all_docs_mass,
        all_docs_mean: mean(all_docs_mass, rel_tok + irr_tok),
        relevant_mass: rel_mass,
        relevant_mean: mean(rel_mass, rel_tok),
        irrelevant_mass: irr_mass,
        irrelevant_mean: mean(irr_mass, irr_tok),
        positions,
    })
}

/// Averages over queries; each mean skips queries where the group is empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub queries: usize,
    pub query_mass: f64,
    pub all_docs_mass: f64,
    pub special_mass: f64,
    pub query_mean: Option<f64>,
    pub relevant_mean: Option<f64>,
    pub irrelevant_mean: Option<f64>,
    /// Mean attention per token at each feedback rank.
    pub position_mean: Vec<f64>,
    /// Queries with both relevant and irrelevant feedback.
    pub mixed_queries: usize,
    /// Mixed queries where relevant tokens get more attention per token.
    pub relevant_wins: usize,
}

fn avg(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize_attention(groups: &[GroupAttention]) -> AttentionSummary {
    let n = groups.len();
    if n == 0 {
        return AttentionSummary::default();
    }
    let k = groups.iter().map(|g| g.positions.len()).max().unwrap_or(0);
    let position_mean = (0..k)
        .map(|r| avg(groups.iter().filter_map(|g| g.positions.get(r)).map(|p| p.mean)).unwrap_or(0.0))
        .collect();
    let mixed: Vec<(f64, f64)> = groups.iter().filter_map(|g| Some((g.relevant_mean?, g.irrelevant_mean?))).collect();
    AttentionSummary {
        queries: n,
        query_mass: groups.iter().map(|g| g.query_mass).sum::<f64>() / n as f64,
        all_docs_mass: groups.iter().map(|g| g.all_docs_mass).sum::<f64>() / n as f64,
        special_mass: groups.iter().map(|g| g.special_mass).sum::<f64>() / n as f64,
        query_mean: avg(groups.iter().filter_map(|g| g.query_mean)),
        relevant_mean: avg(groups.iter().filter_map(|g| g.relevant_mean)),
        irrelevant_mean: avg(groups.iter().filter_map(|g| g.irrelevant_mean)),
        position_mean,
        mixed_queries: mixed.len(),
        relevant_wins: mixed.iter().filter(|(r, i)| r > i).count(),
    }
}
