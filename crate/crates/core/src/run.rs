//! Ranked runs and the TREC six-column run format
//! (`qid Q0 docid rank score tag`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::index::ScoredHit;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ranked results for a set of queries, in query order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunList {
    pub tag: String,
    pub queries: Vec<(String, Vec<ScoredHit>)>,
}

impl RunList {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), queries: Vec::new() }
    }

    pub fn push(&mut self, qid: impl Into<String>, hits: Vec<ScoredHit>) {
        self.queries.push((qid.into(), hits));
    }

    pub fn hits(&self, qid: &str) -> Option<&[ScoredHit]> {
        self.queries.iter().find(|(q, _)| q == qid).map(|(_, h)| h.as_slice())
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn to_trec_string(&self) -> String {
        let mut s = String::new();
        let tag = if self.tag.is_empty() { "run" } else { self.tag.as_str() };
        for (qid, hits) in &self.queries {
            for h in hits {
                let _ = writeln!(s, "{qid} Q0 {} {} {:.6} {tag}", h.doc_id, h.rank, h.score);
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, RunError> {
        let mut run = RunList::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| RunError::Parse { line: line_no, msg };
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let rank: usize = cols[3].parse().map_err(|_| err(format!("bad rank `{}`", cols[3])))?;
            let score: f64 = cols[4].parse().map_err(|_| err(format!("bad score `{}`", cols[4])))?;
            if run.tag.is_empty() {
                run.tag = cols[5].to_string();
            }
            let hit = ScoredHit { doc_id: cols[2].to_string(), score, rank };
            match run.queries.last_mut() {
                Some((q, hits)) if q == cols[0] => hits.push(hit),
                _ => {
                    if run.queries.iter().any(|(q, _)| q == cols[0]) {
                        return Err(err(format!("query `{}` is not contiguous", cols[0])));
                    }
                    run.queries.push((cols[0].to_string(), vec![hit]));
                }
            }
        }
        for (_, hits) in &mut run.queries {
            hits.sort_by_key(|h| h.rank);
        }
        Ok(run)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RunError> {
        fs::write(path, self.to_trec_string())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, RunError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
