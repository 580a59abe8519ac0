//! Contrastive training of the baseline dual encoder and the feedback query
//! encoder.

mod adam;
mod gradcheck;
mod loss;
mod negatives;
mod trainer;

use thiserror::Error;

pub use adam::{learning_rate, Adam};
pub use gradcheck::{check_gradient, example_gradient, example_loss, GradCheck, REL_ERR_FLOOR};
pub use loss::{nll_loss, nll_loss_grad, softmax, softmax_nll, LossGrad};
pub use negatives::{fnv1a, query_rng, sample_negatives, NEGATIVE_POOL_DEPTH};
pub use trainer::{best_checkpoint, train_baseline, train_prf, PrfTrainInputs, TrainConfig, TrainData, TrainLogRecord, TrainOutcome};

use crate::analysis::AnalysisError;
use crate::encoder::EncoderError;
use crate::index::IndexError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("embedding dimension {actual} differs from {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{phase} training diverged at step {step} (loss {loss})")]
    Diverged { phase: String, step: usize, loss: f64 },
    #[error("no training query has a judged-relevant document")]
    NoTrainingQueries,
    #[error("document `{0}` missing from the corpus")]
    MissingDocument(String),
    #[error("document `{0}` missing from the index")]
    MissingEmbedding(String),
    #[error("invalid training config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
