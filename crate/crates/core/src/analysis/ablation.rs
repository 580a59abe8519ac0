use serde::Serialize;

use crate::eval::{avg_rel, evaluate, Metric, Qrels};
use crate::run::RunList;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    /// Feedback depth; `None` for the first-pass baseline.
    pub k: Option<usize>,
    pub mrr10: f64,
    pub ndcg10: f64,
    pub recall1k: f64,
    pub hole10: f64,
    /// Mean grade of the first-pass document at rank k.
    pub avg_rel: Option<f64>,
}

fn row(label: &str, k: Option<usize>, run: &RunList, first_pass: &RunList, qrels: &Qrels) -> AblationRow {
    AblationRow {
        label: label.to_string(),
        k,
        mrr10: evaluate(run, qrels, Metric::MRR10).mean,
        ndcg10: evaluate(run, qrels, Metric::NDCG10).mean,
        recall1k: evaluate(run, qrels, Metric::RECALL1K).mean,
        hole10: evaluate(run, qrels, Metric::HOLE10).mean,
        avg_rel: k.filter(|&k| k > 0).map(|k| avg_rel(first_pass, qrels, k)),
    }
}

/// Baseline row followed by one row per feedback depth.
pub fn depth_ablation(first_pass: &RunList, runs: &[(usize, &RunList)], qrels: &Qrels) -> Vec<AblationRow> {
    let mut rows = vec![row("baseline", None, first_pass, first_pass, qrels)];
    for &(k, run) in runs {
        rows.push(row(&format!("prf k={k}"), Some(k), run, first_pass, qrels));
    }
    rows
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("label,k,mrr@10,ndcg@10,recall@1000,hole@10,avg_rel\n");
    for r in rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.label,
            opt(r.k.map(|k| k.to_string())),
            r.mrr10,
            r.ndcg10,
            r.recall1k,
            r.hole10,
            opt(r.avg_rel.map(|a| format!("{a:.6}")))
        ));
    }
    out
}

/// Fixed-width table for terminal output.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "run", "MRR@10", "NDCG@10", "R@1K", "HOLE@10", "AvgRel"
    );
    for r in rows {
        let ar = r.avg_rel.map_or("-".to_string(), |a| format!("{a:.4}"));
        out.push_str(&format!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}\n",
            r.label, r.mrr10, r.ndcg10, r.recall1k, r.hole10, ar
        ));
    }
    out
}
