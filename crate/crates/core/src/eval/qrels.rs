use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::EvalError;

/// Graded relevance judgments: query id -> doc id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment. A repeated pair keeps the larger grade and returns
    /// the grade that was there before.
    pub fn insert(&mut self, qid: &str, doc_id: &str, grade: u32) -> Option<u32> {
        let slot = self.judgments.entry(qid.to_string()).or_default();
        match slot.get(doc_id).copied() {
            Some(prev) => {
                slot.insert(doc_id.to_string(), prev.max(grade));
                Some(prev)
            }
            None => {
                slot.insert(doc_id.to_string(), grade);
                None
            }
        }
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(qid)?.get(doc_id).copied()
    }

    /// Grade with unjudged documents counted as 0.
    pub fn grade_or_zero(&self, qid: &str, doc_id: &str) -> u32 {
        self.grade(qid, doc_id).unwrap_or(0)
    }

    pub fn has_query(&self, qid: &str) -> bool {
        self.judgments.contains_key(qid)
    }

    pub fn query(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// Documents with grade at least `threshold`, in doc-id order.
    pub fn relevant(&self, qid: &str, threshold: u32) -> Vec<&str> {
        self.judgments
            .get(qid)
            .map(|m| m.iter().filter(|(_, &g)| g >= threshold).map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn max_grade(&self) -> u32 {
        self.judgments.values().flat_map(|m| m.values()).copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Parses `qid 0 docid grade` lines. Returns warnings for repeated pairs.
    pub fn parse(text: &str) -> Result<(Self, Vec<String>), EvalError> {
        let mut qrels = Self::new();
        let mut warnings = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(EvalError::Parse {
                    line: line_no,
                    msg: format!("expected 4 columns, found {}", cols.len()),
                });
            }
            let grade: i64 = cols[3].parse().map_err(|_| EvalError::Parse {
                line: line_no,
                msg: format!("grade `{}` is not an integer", cols[3]),
            })?;
            if grade < 0 {
                return Err(EvalError::Parse { line: line_no, msg: "negative grade".into() });
            }
            if let Some(prev) = qrels.insert(cols[0], cols[2], grade as u32) {
                warnings.push(format!(
                    "line {line_no}: duplicate judgment ({}, {}) grades {prev} and {grade}; keeping {}",
                    cols[0],
                    cols[2],
                    prev.max(grade as u32)
                ));
            }
        }
        Ok((qrels, warnings))
    }

    pub fn to_trec_string(&self) -> String {
        let mut s = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                let _ = writeln!(s, "{q} 0 {d} {g}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_line() {
        let (q, w) = Qrels::parse("q1 0 d1 2\n").unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
        assert!(w.is_empty());
    }

    #[test]
    fn duplicate_keeps_max_and_warns() {
        let (q, w) = Qrels::parse("q1 0 d1 1\nq1 0 d1 3\n").unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(3));
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("line 2"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = Qrels::parse("q1 0 d1 1\nq1 0 d2\n").unwrap_err();
        assert!(matches!(err, EvalError::Parse { line: 2, .. }));
        assert!(Qrels::parse("q1 0 d1 x").is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let (q, _) = Qrels::parse("q2 0 b 0\nq1 0 a 3\nq1 0 c 1\n").unwrap();
        let (back, _) = Qrels::parse(&q.to_trec_string()).unwrap();
        assert_eq!(q, back);
        assert_eq!(q.relevant("q1", 2), vec!["a"]);
    }
}
