use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{EvalError, Qrels};
use crate::index::ScoredHit;
use crate::run::RunList;

/// A per-query ranking metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Reciprocal rank of the first document with grade >= `threshold`.
    Mrr { cutoff: usize, threshold: u32 },
    /// Linear-gain NDCG with `log2(r + 1)` discount.
    Ndcg { cutoff: usize },
    /// Recall with grades binarized at `binarize_at`.
    Recall { cutoff: usize, binarize_at: u32 },
    /// Fraction of the top `cutoff` with no judgment at all.
    Hole { cutoff: usize },
}

impl Metric {
    pub const MRR10: Metric = Metric::Mrr { cutoff: 10, threshold: 1 };
    pub const NDCG10: Metric = Metric::Ndcg { cutoff: 10 };
    pub const RECALL1K: Metric = Metric::Recall { cutoff: 1000, binarize_at: 2 };
    pub const HOLE10: Metric = Metric::Hole { cutoff: 10 };
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr { cutoff, .. } => write!(f, "mrr@{cutoff}"),
            Metric::Ndcg { cutoff } => write!(f, "ndcg@{cutoff}"),
            Metric::Recall { cutoff, .. } => write!(f, "recall@{cutoff}"),
            Metric::Hole { cutoff } => write!(f, "hole@{cutoff}"),
        }
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::UnknownMetric(s.to_string());
        let (name, cut) = s.trim().split_once('@').ok_or_else(bad)?;
        let cutoff: usize = cut.parse().map_err(|_| bad())?;
        if cutoff == 0 {
            return Err(bad());
        }
        match name.to_ascii_lowercase().as_str() {
            "mrr" => Ok(Metric::Mrr { cutoff, threshold: 1 }),
            "ndcg" => Ok(Metric::Ndcg { cutoff }),
            "recall" | "r" => Ok(Metric::Recall { cutoff, binarize_at: 2 }),
            "hole" => Ok(Metric::Hole { cutoff }),
            _ => Err(bad()),
        }
    }
}

/// Per-query values and their mean over evaluated queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub evaluated: usize,
    /// Queries in the run that were not evaluated (no judgments, or no
    /// positives where the metric needs them).
    pub excluded: usize,
}

impl MetricReport {
    fn from_values(metric: Metric, per_query: BTreeMap<String, f64>, excluded: usize) -> Self {
        let evaluated = per_query.len();
        let mean = if evaluated == 0 { 0.0 } else { per_query.values().sum::<f64>() / evaluated as f64 };
        Self { metric: metric.to_string(), per_query, mean, evaluated, excluded }
    }
}

fn mrr(hits: &[ScoredHit], qid: &str, qrels: &Qrels, cutoff: usize, threshold: u32) -> f64 {
    hits.iter()
        .take(cutoff)
        .position(|h| qrels.grade_or_zero(qid, &h.doc_id) >= threshold)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

fn ndcg(hits: &[ScoredHit], qid: &str, qrels: &Qrels, cutoff: usize) -> f64 {
    let discount = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = hits
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(r, h)| qrels.grade_or_zero(qid, &h.doc_id) as f64 * discount(r))
        .sum();
    let mut ideal: Vec<u32> = qrels.query(qid).map(|m| m.values().copied().collect()).unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(cutoff).enumerate().map(|(r, &g)| g as f64 * discount(r)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn recall(hits: &[ScoredHit], qid: &str, qrels: &Qrels, cutoff: usize, binarize_at: u32) -> f64 {
    let total = qrels.relevant(qid, binarize_at).len();
    let found = hits
        .iter()
        .take(cutoff)
        .filter(|h| qrels.grade_or_zero(qid, &h.doc_id) >= binarize_at)
        .count();
    found as f64 / total as f64
}

fn hole(hits: &[ScoredHit], qid: &str, qrels: &Qrels, cutoff: usize) -> f64 {
    let top = &hits[..hits.len().min(cutoff)];
    if top.is_empty() {
        return 0.0;
    }
    top.iter().filter(|h| qrels.grade(qid, &h.doc_id).is_none()).count() as f64 / top.len() as f64
}

/// Evaluates one metric over every query in the run.
pub fn evaluate(run: &RunList, qrels: &Qrels, metric: Metric) -> MetricReport {
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    for (qid, hits) in &run.queries {
        if !qrels.has_query(qid) {
            excluded += 1;
            continue;
        }
        let value = match metric {
            Metric::Mrr { cutoff, threshold } => {
                if qrels.relevant(qid, threshold).is_empty() {
                    None
                } else {
                    Some(mrr(hits, qid, qrels, cutoff, threshold))
                }
            }
            Metric::Ndcg { cutoff } => {
                if qrels.relevant(qid, 1).is_empty() {
                    None
                } else {
                    Some(ndcg(hits, qid, qrels, cutoff))
                }
            }
            Metric::Recall { cutoff, binarize_at } => {
                if qrels.relevant(qid, binarize_at).is_empty() {
                    None
                } else {
                    Some(recall(hits, qid, qrels, cutoff, binarize_at))
                }
            }
            Metric::Hole { cutoff } => Some(hole(hits, qid, qrels, cutoff)),
        };
        match value {
            Some(v) => {
                per_query.insert(qid.clone(), v);
            }
            None => excluded += 1,
        }
    }
    MetricReport::from_values(metric, per_query, excluded)
}

pub fn mrr_at(run: &RunList, qrels: &Qrels, cutoff: usize, threshold: u32) -> MetricReport {
    evaluate(run, qrels, Metric::Mrr { cutoff, threshold })
}

pub fn ndcg_at(run: &RunList, qrels: &Qrels, cutoff: usize) -> MetricReport {
    evaluate(run, qrels, Metric::Ndcg { cutoff })
}

pub fn recall_at(run: &RunList, qrels: &Qrels, cutoff: usize, binarize_at: u32) -> MetricReport {
    evaluate(run, qrels, Metric::Recall { cutoff, binarize_at })
}

pub fn hole_at(run: &RunList, qrels: &Qrels, cutoff: usize) -> MetricReport {
    evaluate(run, qrels, Metric::Hole { cutoff })
}

/// Mean grade of the document at rank `position` (1-based), unjudged counted
/// as 0. Queries whose list is shorter than `position` are skipped.
pub fn avg_rel(first_pass: &RunList, qrels: &Qrels, position: usize) -> f64 {
    let grades: Vec<f64> = first_pass
        .queries
        .iter()
        .filter_map(|(qid, hits)| {
            let h = hits.get(position.checked_sub(1)?)?;
            Some(qrels.grade_or_zero(qid, &h.doc_id) as f64)
        })
        .collect();
    if grades.is_empty() {
        0.0
    } else {
        grades.iter().sum::<f64>() / grades.len() as f64
    }
}

/// Per-query `a - b` over queries evaluated in both reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerQueryDiff {
    pub deltas: Vec<(String, f64)>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

pub const TIE_EPS: f64 = 1e-9;

pub fn per_query_diff(run_a: &RunList, run_b: &RunList, qrels: &Qrels, metric: Metric) -> PerQueryDiff {
    diff_reports(&evaluate(run_a, qrels, metric), &evaluate(run_b, qrels, metric))
}

pub fn diff_reports(a: &MetricReport, b: &MetricReport) -> PerQueryDiff {
    let mut out = PerQueryDiff { deltas: Vec::new(), wins: 0, losses: 0, ties: 0 };
    for (qid, va) in &a.per_query {
        if let Some(vb) = b.per_query.get(qid) {
            let d = va - vb;
            if d.abs() < TIE_EPS {
                out.ties += 1;
            } else if d > 0.0 {
                out.wins += 1;
            } else {
                out.losses += 1;
            }
            out.deltas.push((qid.clone(), d));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(qid: &str, docs: &[&str]) -> RunList {
        let mut r = RunList::new("t");
        r.push(
            qid,
            docs.iter()
                .enumerate()
                .map(|(i, d)| ScoredHit { doc_id: d.to_string(), score: -(i as f64), rank: i + 1 })
                .collect(),
        );
        r
    }

    fn qrels(lines: &str) -> Qrels {
        Qrels::parse(lines).unwrap().0
    }

    #[test]
    fn mrr_examples() {
        let q = qrels("q 0 r 1\n");
        assert_eq!(mrr_at(&run_of("q", &["r", "a"]), &q, 10, 1).mean, 1.0);
        let deep: Vec<String> = (0..10).map(|i| format!("x{i}")).collect();
        let mut docs: Vec<&str> = deep.iter().map(String::as_str).collect();
        docs.push("r");
        assert_eq!(mrr_at(&run_of("q", &docs), &q, 10, 1).mean, 0.0);
        let third = mrr_at(&run_of("q", &["a", "b", "r"]), &q, 10, 1).mean;
        assert!((third - 0.333333).abs() < 1e-6);
    }

    #[test]
    fn ndcg_examples() {
        let q = qrels("q 0 dA 3\nq 0 dB 1\n");
        assert!((ndcg_at(&run_of("q", &["dA", "dB"]), &q, 10).mean - 1.0).abs() < 1e-12);
        let swapped = ndcg_at(&run_of("q", &["dB", "dA"]), &q, 10).mean;
        let want = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((swapped - want).abs() < 1e-12);
        assert!((swapped - 0.7967).abs() < 1e-4);
        let zero = qrels("q 0 dA 3\nq 0 z 0\n");
        assert_eq!(ndcg_at(&run_of("q", &["z", "y"]), &zero, 10).mean, 0.0);
    }

    #[test]
    fn recall_examples() {
        let q = qrels("q 0 a 2\nq 0 b 3\n");
        assert_eq!(recall_at(&run_of("q", &["b", "x", "a"]), &q, 1000, 2).mean, 1.0);
        let q2 = qrels("q 0 dA 2\nq 0 dB 1\n");
        assert_eq!(recall_at(&run_of("q", &["dA"]), &q2, 1000, 2).mean, 1.0);
        let q4 = qrels("q 0 a 2\nq 0 b 2\nq 0 c 2\nq 0 d 2\n");
        assert_eq!(recall_at(&run_of("q", &["a", "x", "c"]), &q4, 1000, 2).mean, 0.5);
        let none = qrels("q 0 a 1\n");
        let rep = recall_at(&run_of("q", &["a"]), &none, 1000, 2);
        assert_eq!((rep.evaluated, rep.excluded), (0, 1));
    }

    #[test]
    fn hole_examples() {
        let docs: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let all: String = docs.iter().map(|d| format!("q 0 {d} 0\n")).collect();
        assert_eq!(hole_at(&run_of("q", &refs), &qrels(&all), 10).mean, 0.0);
        let six: String = docs[..6].iter().map(|d| format!("q 0 {d} 1\n")).collect();
        assert!((hole_at(&run_of("q", &refs), &qrels(&six), 10).mean - 0.4).abs() < 1e-12);
        let short = hole_at(&run_of("q", &["d0", "zz"]), &qrels(&six), 10).mean;
        assert_eq!(short, 0.5);
    }

    #[test]
    fn avg_rel_examples() {
        let q = qrels("q1 0 a 3\nq2 0 b 1\nq3 0 c 0\nq1 0 x 2\nq2 0 y 2\nq3 0 z 2\n");
        let mut run = RunList::new("t");
        for (qid, d1, d2) in [("q1", "x", "a"), ("q2", "y", "b"), ("q3", "z", "c")] {
            run.push(
                qid,
                vec![
                    ScoredHit { doc_id: d1.into(), score: 2.0, rank: 1 },
                    ScoredHit { doc_id: d2.into(), score: 1.0, rank: 2 },
                ],
            );
        }
        assert_eq!(avg_rel(&run, &q, 1), 2.0);
        assert!((avg_rel(&run, &q, 2) - 1.333333).abs() < 1e-6);
        assert_eq!(avg_rel(&run_of("q9", &["u", "v"]), &q, 2), 0.0);
    }

    #[test]
    fn unjudged_queries_are_excluded_and_counted() {
        let q = qrels("q1 0 a 1\n");
        let mut run = run_of("q1", &["a"]);
        run.push("q2", vec![ScoredHit { doc_id: "a".into(), score: 1.0, rank: 1 }]);
        let rep = mrr_at(&run, &q, 10, 1);
        assert_eq!((rep.evaluated, rep.excluded), (1, 1));
    }

    #[test]
    fn per_query_diff_counts() {
        let q = qrels("q1 0 a 1\nq2 0 b 1\n");
        let mut a = run_of("q1", &["a"]);
        a.push("q2", vec![ScoredHit { doc_id: "b".into(), score: 1.0, rank: 1 }]);
        let same = per_query_diff(&a, &a, &q, Metric::NDCG10);
        assert_eq!((same.wins, same.losses, same.ties), (0, 0, 2));
        let mut b = run_of("q1", &["a"]);
        b.push("q2", vec![ScoredHit { doc_id: "z".into(), score: 1.0, rank: 1 }]);
        let d = per_query_diff(&a, &b, &q, Metric::NDCG10);
        let nonzero: Vec<_> = d.deltas.iter().filter(|(_, v)| v.abs() > TIE_EPS).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, "q2");
        assert_eq!((d.wins, d.losses, d.ties), (1, 0, 1));
    }

    #[test]
    fn parses_metric_names() {
        assert_eq!("mrr@10".parse::<Metric>().unwrap(), Metric::MRR10);
        assert_eq!("NDCG@10".parse::<Metric>().unwrap(), Metric::NDCG10);
        assert_eq!("recall@1000".parse::<Metric>().unwrap(), Metric::RECALL1K);
        assert_eq!("hole@10".parse::<Metric>().unwrap(), Metric::HOLE10);
        assert!("map@10".parse::<Metric>().is_err());
        assert!("mrr".parse::<Metric>().is_err());
    }
}
