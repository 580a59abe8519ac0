use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::Qrels;
use crate::run::RunList;

/// First-pass depth from which negatives are drawn.
pub const NEGATIVE_POOL_DEPTH: usize = 200;

/// FNV-1a, used to derive a per-query stream from the run seed.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn query_rng(seed: u64, qid: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(qid))
}

/// Draws `n` fixed negatives for `qid` from the top of its first-pass run,
/// skipping every judged-relevant document (grade >= 1).
///
/// The eligible candidates, in rank order, go through a partial Fisher-Yates
/// pass driven by a stream seeded with `seed ^ fnv1a(qid)`: for position `i`
/// in `0..n`, swap it with a uniform index in `i..len`. The first `n` are kept. When fewer than `n` are
/// eligible, uniformly drawn corpus documents from the same stream fill the
/// remainder; the result is shorter only if the corpus itself runs out.
pub fn sample_negatives(run: &RunList, qrels: &Qrels, qid: &str, n: usize, seed: u64, corpus_ids: &[String]) -> Vec<String> {
    let mut rng = query_rng(seed, qid);
    let mut candidates: Vec<&str> = run
        .hits(qid)
        .unwrap_or(&[])
        .iter()
        .take(NEGATIVE_POOL_DEPTH)
        .map(|h| h.doc_id.as_str())
        .filter(|d| qrels.grade_or_zero(qid, d) == 0)
        .collect();
    let take = n.min(candidates.len());
    for i in 0..take {
        let j = rng.random_range(i..candidates.len());
        candidates.swap(i, j);
    }
    candidates.truncate(take);
    let mut chosen: Vec<String> = candidates.into_iter().map(String::from).collect();
    if chosen.len() < n && !corpus_ids.is_empty() {
        let mut taken: HashSet<String> = chosen.iter().cloned().collect();
        let mut attempts = 0;
        while chosen.len() < n && attempts < 64 * corpus_ids.len() {
            attempts += 1;
            let d = &corpus_ids[rng.random_range(0..corpus_ids.len())];
            if qrels.grade_or_zero(qid, d) == 0 && taken.insert(d.clone()) {
                chosen.push(d.clone());
            }
        }
        if chosen.len() < n {
            log::warn!("query {qid}: only {} negatives available, wanted {n}", chosen.len());
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::ScoredHit;

    fn run_of(qid: &str, docs: &[&str]) -> RunList {
        let mut run = RunList::new("t");
        let hits = docs
            .iter()
            .enumerate()
            .map(|(i, d)| ScoredHit { doc_id: d.to_string(), score: -(i as f64), rank: i + 1 })
            .collect();
        run.push(qid, hits);
        run
    }

    #[test]
    fn forced_choice() {
        let run = run_of("q", &["pos", "a", "b", "c"]);
        let mut qrels = Qrels::new();
        qrels.insert("q", "pos", 1);
        let mut got = sample_negatives(&run, &qrels, "q", 3, 7, &[]);
        got.sort();
        assert_eq!(got, ["a", "b", "c"]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let docs: Vec<String> = (0..300).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let run = run_of("q", &refs);
        let qrels = Qrels::new();
        let a = sample_negatives(&run, &qrels, "q", 8, 1, &docs);
        assert_eq!(a, sample_negatives(&run, &qrels, "q", 8, 1, &docs));
        assert_ne!(a, sample_negatives(&run, &qrels, "q", 8, 2, &docs));
        // never beyond the top 200
        assert!(a.iter().all(|d| d[1..].parse::<usize>().unwrap() < NEGATIVE_POOL_DEPTH));
    }

    /// Records the draw trace first, then picks by repeatedly removing the
    /// drawn offset from the remaining pool.
    fn reference(candidates: &[&str], n: usize, seed: u64, qid: &str) -> Vec<String> {
        let mut rng = query_rng(seed, qid);
        let len = candidates.len();
        let trace: Vec<usize> = (0..n).map(|i| rng.random_range(i..len) - i).collect();
        let mut pool: std::collections::VecDeque<&str> = candidates.iter().copied().collect();
        let mut out = Vec::new();
        for off in trace {
            // the swap moves the pool head into the drawn slot
            let pick = pool[off];
            let head = pool.pop_front().unwrap();
            if off > 0 {
                pool[off - 1] = head;
            }
            out.push(pick.to_string());
        }
        out
    }

    #[test]
    fn matches_reference_shuffle() {
        let docs: Vec<String> = (0..250).map(|i| format!("doc{i:03}")).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let run = run_of("q17", &refs);
        let mut qrels = Qrels::new();
        for i in (0..250).step_by(7) {
            qrels.insert("q17", &docs[i], 1 + (i % 2) as u32);
        }
        let eligible: Vec<&str> = refs[..200].iter().copied().filter(|d| qrels.grade("q17", d).is_none()).collect();
        let got = sample_negatives(&run, &qrels, "q17", 8, 42, &docs);
        assert_eq!(got, reference(&eligible, 8, 42, "q17"));
    }

    #[test]
    fn pads_from_corpus_without_relevant_docs() {
        let run = run_of("q", &["pos", "a"]);
        let mut qrels = Qrels::new();
        qrels.insert("q", "pos", 2);
        qrels.insert("q", "rel", 1);
        let corpus: Vec<String> = ["pos", "a", "rel", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let got = sample_negatives(&run, &qrels, "q", 4, 3, &corpus);
        assert_eq!(got.len(), 4);
        assert_eq!(got[0], "a");
        let set: HashSet<&String> = got.iter().collect();
        assert_eq!(set.len(), 4);
        assert!(!got.iter().any(|d| d == "pos" || d == "rel"));
    }
}
