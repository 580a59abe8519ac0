//! Okapi BM25 lexical baseline.

use std::collections::HashMap;

use crate::index::{rank_order, ScoredHit};

pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

/// Collection statistics needed for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub num_docs: usize,
    pub avg_doc_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

/// BM25 score of one document for a bag of query terms.
pub fn bm25_score(query: &[String], doc: &[String], stats: &CorpusStats, k1: f64, b: f64) -> f64 {
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in doc {
        *tf.entry(t.as_str()).or_default() += 1;
    }
    let norm = k1 * (1.0 - b + b * doc.len() as f64 / stats.avg_doc_len);
    query
        .iter()
        .map(|q| match tf.get(q.as_str()) {
            None => 0.0,
            Some(&f) => {
                let f = f as f64;
                stats.idf(q) * f * (k1 + 1.0) / (f + norm)
            }
        })
        .sum()
}

/// Inverted index over tokenized documents.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    doc_lens: Vec<usize>,
    postings: HashMap<String, Vec<(usize, usize)>>,
    stats: CorpusStats,
    pub k1: f64,
    pub b: f64,
}

impl Bm25Index {
    pub fn build<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, Vec<String>)>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_lens = Vec::new();
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (i, (id, toks)) in docs.into_iter().enumerate() {
            doc_ids.push(id.to_string());
            doc_lens.push(toks.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, f) in tf {
                postings.entry(t).or_default().push((i, f));
            }
        }
        let num_docs = doc_ids.len();
        let avg_doc_len = if num_docs == 0 { 0.0 } else { doc_lens.iter().sum::<usize>() as f64 / num_docs as f64 };
        let doc_freq = postings.iter().map(|(t, p)| (t.clone(), p.len())).collect();
        Self {
            doc_ids,
            doc_lens,
            postings,
            stats: CorpusStats { num_docs, avg_doc_len, doc_freq },
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    /// Documents matching at least one query term, best first, ties by id.
    pub fn search(&self, query: &[String], depth: usize) -> Vec<ScoredHit> {
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for q in query {
            let Some(list) = self.postings.get(q) else { continue };
            let idf = self.stats.idf(q);
            for &(d, f) in list {
                let f = f as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * self.doc_lens[d] as f64 / self.stats.avg_doc_len);
                *scores.entry(d).or_default() += idf * f * (self.k1 + 1.0) / (f + norm);
            }
        }
        let mut ranked: Vec<(f64, usize)> = scores.into_iter().map(|(d, s)| (s, d)).collect();
        ranked.sort_by(|a, b| rank_order(a.0, &self.doc_ids[a.1], b.0, &self.doc_ids[b.1]));
        ranked
            .into_iter()
            .take(depth)
            .enumerate()
            .map(|(r, (score, d))| ScoredHit { doc_id: self.doc_ids[d].clone(), score, rank: r + 1 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let idx = Bm25Index::build([("d1", toks("a b")), ("d2", toks("c"))]);
        assert_eq!(bm25_score(&toks("z"), &toks("a b"), idx.stats(), 0.9, 0.4), 0.0);
    }

    #[test]
    fn single_doc_hand_value() {
        let idx = Bm25Index::build([("d1", toks("a"))]);
        let s = bm25_score(&toks("a"), &toks("a"), idx.stats(), 0.9, 0.4);
        assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((idx.search(&toks("a"), 10)[0].score - s).abs() < 1e-12);
    }

    #[test]
    fn longer_document_scores_lower() {
        let idx = Bm25Index::build([("d1", toks("a b c d")), ("d2", toks("e f"))]);
        let short = bm25_score(&toks("a"), &toks("a b"), idx.stats(), 0.9, 0.4);
        let long = bm25_score(&toks("a"), &toks("a b c d"), idx.stats(), 0.9, 0.4);
        assert!(long < short);
    }

    #[test]
    fn search_agrees_with_pointwise_scores() {
        let docs = [("d1", toks("a b a")), ("d2", toks("b c")), ("d3", toks("c c a d")), ("d4", toks("e"))];
        let idx = Bm25Index::build(docs.clone());
        let q = toks("a c");
        let hits = idx.search(&q, 10);
        assert_eq!(hits.len(), 3);
        for h in &hits {
            let doc = &docs.iter().find(|(id, _)| *id == h.doc_id).unwrap().1;
            assert!((h.score - bm25_score(&q, doc, idx.stats(), 0.9, 0.4)).abs() < 1e-12);
        }
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
