//! Ranking metrics and significance testing.
//!
//! NDCG uses linear gain with a `log2(r + 1)` discount. Unjudged documents
//! count as grade 0 except for HOLE, which counts them. Queries with no
//! judgments, or no positives where a metric needs them, are left out of the
//! mean and counted in [`MetricReport::excluded`].

mod metrics;
mod qrels;
mod stats;

use thiserror::Error;

pub use metrics::{
    avg_rel, diff_reports, evaluate, hole_at, mrr_at, ndcg_at, per_query_diff, recall_at, Metric, MetricReport,
    PerQueryDiff, TIE_EPS,
};
pub use qrels::Qrels;
pub use stats::{paired_t_test, paired_t_test_reports, TTest, SIGNIFICANCE_LEVEL};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("qrels line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown metric `{0}` (expected mrr@N, ndcg@N, recall@N or hole@N)")]
    UnknownMetric(String),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 paired values, got {0}")]
    TooFewPairs(usize),
}
