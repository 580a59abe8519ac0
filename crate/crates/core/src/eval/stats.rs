use serde::Serialize;
use statrs::function::beta::beta_reg;

use super::{EvalError, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_diff: f64,
    pub significant: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Two-tailed paired t-test of `a - b`.
///
/// With zero variance in the differences the statistic is undefined; the
/// result is `p = 1` when the mean difference is 0 and `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (var / n as f64).sqrt();
        let nu = df as f64;
        (t, beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)))
    };
    Ok(TTest { t, df, p, mean_diff: mean, significant: p <= SIGNIFICANCE_LEVEL })
}

/// Paired test over the queries evaluated in both reports.
pub fn paired_t_test_reports(a: &MetricReport, b: &MetricReport) -> Result<TTest, EvalError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .per_query
        .iter()
        .filter_map(|(q, va)| b.per_query.get(q).map(|vb| (*va, *vb)))
        .unzip();
    paired_t_test(&xs, &ys)
}
