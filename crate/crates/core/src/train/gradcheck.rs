//! Central finite-difference check of the training gradient.

use serde::Serialize;

use super::{nll_loss_grad, softmax_nll, TrainError};
use crate::encoder::{EncoderParams, TokenSequence};
use crate::index::dot;

/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged by absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `tensor[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Loss of one example against fixed candidate embeddings, positive first.
pub fn example_loss(params: &EncoderParams, seq: &TokenSequence, docs: &[&[f64]]) -> Result<f64, TrainError> {
    let q = params.encode(seq)?.0;
    Ok(softmax_nll(&docs.iter().map(|d| dot(&q, d)).collect::<Vec<_>>()))
}

/// Analytic gradient of [`example_loss`] w.r.t. every parameter.
pub fn example_gradient(params: &EncoderParams, seq: &TokenSequence, docs: &[&[f64]]) -> Result<(f64, EncoderParams), TrainError> {
    let cache = params.forward(seq)?;
    let lg = nll_loss_grad(&cache.embedding().0, docs);
    let mut grads = EncoderParams::zeros(params.config);
    params.backward(&cache, &lg.d_query, &mut grads);
    Ok((lg.loss, grads))
}

/// Compares every analytic gradient entry with `(L(θ+h) - L(θ-h)) / 2h`.
/// The relative error is `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn check_gradient(params: &EncoderParams, seq: &TokenSequence, docs: &[&[f64]], h: f64) -> Result<GradCheck, TrainError> {
    let (_, grads) = example_gradient(params, seq, docs)?;
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.named_tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let mut probe = params.clone();
    let mut out = GradCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    for (ti, name) in names.iter().enumerate() {
        for (j, &a) in analytic[ti].iter().enumerate() {
            let orig = probe.tensors_mut()[ti][j];
            probe.tensors_mut()[ti][j] = orig + h;
            let plus = example_loss(&probe, seq, docs)?;
            probe.tensors_mut()[ti][j] = orig - h;
            let minus = example_loss(&probe, seq, docs)?;
            probe.tensors_mut()[ti][j] = orig;
            let num = (plus - minus) / (2.0 * h);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(REL_ERR_FLOOR);
            out.checked += 1;
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = format!("{name}[{j}]");
            }
        }
    }
    Ok(out)
}
