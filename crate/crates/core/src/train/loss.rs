use crate::index::{dot, EmbeddingVector};

use super::TrainError;

/// `-log softmax(scores)[0]` with the positive score first.
pub fn softmax_nll(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    (lse - scores[0]).max(0.0)
}

/// Softmax probabilities with max-subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn check_dims(q: &EmbeddingVector, docs: &[&EmbeddingVector]) -> Result<(), TrainError> {
    for d in docs {
        if d.dim() != q.dim() {
            return Err(TrainError::DimensionMismatch { expected: q.dim(), actual: d.dim() });
        }
    }
    Ok(())
}

/// Negative log-likelihood of the positive against the negatives.
pub fn nll_loss(q: &EmbeddingVector, d_plus: &EmbeddingVector, d_minus: &[EmbeddingVector]) -> Result<f64, TrainError> {
    let docs: Vec<&EmbeddingVector> = std::iter::once(d_plus).chain(d_minus).collect();
    check_dims(q, &docs)?;
    let scores: Vec<f64> = docs.iter().map(|d| q.dot(d)).collect();
    Ok(softmax_nll(&scores))
}

/// Loss and its gradients for one example over candidate documents, the
/// positive first.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// d loss / d q = sum_j p_j d_j - d_plus.
    pub d_query: Vec<f64>,
    /// d loss / d score_j = p_j - [j = 0].
    pub d_scores: Vec<f64>,
}

pub fn nll_loss_grad(q: &[f64], docs: &[&[f64]]) -> LossGrad {
    let scores: Vec<f64> = docs.iter().map(|d| dot(q, d)).collect();
    let loss = softmax_nll(&scores);
    let mut d_scores = softmax(&scores);
    d_scores[0] -= 1.0;
    let mut d_query = vec![0.0; q.len()];
    for (g, d) in d_scores.iter().zip(docs) {
        for (o, x) in d_query.iter_mut().zip(d.iter()) {
            *o += g * x;
        }
    }
    LossGrad { loss, d_query, d_scores }
}
