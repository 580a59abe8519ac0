//! Model inputs: `[CLS] q [SEP]` and the feedback layout
//! `[CLS] q [SEP] d1 [SEP] ... dk [SEP]`.

use std::ops::Range;

use super::vocab::Vocabulary;
use super::EncoderError;

/// Token ids plus attention mask. Padding only ever appears at the tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    /// Wraps real tokens and pads them with `pad_id` to `padded_len`.
    pub fn padded(mut ids: Vec<u32>, padded_len: usize, pad_id: u32) -> Self {
        let real = ids.len();
        let mut mask = vec![1u8; real];
        if padded_len > real {
            ids.resize(padded_len, pad_id);
            mask.resize(padded_len, 0);
        }
        Self { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of unmasked positions.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.real_len()]
    }
}

/// Feedback-encoder input with recorded spans (half-open ranges).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrfInput {
    pub seq: TokenSequence,
    pub query_span: Range<usize>,
    /// One span per feedback document in rank order. A document truncated away
    /// entirely keeps an empty span positioned at its `[SEP]`.
    pub doc_spans: Vec<Range<usize>>,
}

impl PrfInput {
    pub fn k(&self) -> usize {
        self.doc_spans.len()
    }
}

/// Layout parameters shared by every input builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub max_len: usize,
    pub query_budget: usize,
    pub cls: u32,
    pub sep: u32,
    pub pad: u32,
}

impl InputLayout {
    pub fn new(max_len: usize, query_budget: usize, vocab: &Vocabulary) -> Self {
        Self {
            max_len,
            query_budget,
            cls: vocab.cls_id(),
            sep: vocab.sep_id(),
            pad: vocab.pad_id(),
        }
    }

    fn query_tokens<'a>(&self, query_ids: &'a [u32]) -> Result<&'a [u32], EncoderError> {
        let budget = self.query_budget.min(self.max_len.saturating_sub(2));
        let q = &query_ids[..query_ids.len().min(budget)];
        if q.is_empty() {
            return Err(EncoderError::EmptyQuery);
        }
        Ok(q)
    }

    /// `[CLS] q [SEP]`, query tail-truncated to the budget, padded to `max_len`.
    pub fn query_input(&self, query_ids: &[u32]) -> Result<TokenSequence, EncoderError> {
        let q = self.query_tokens(query_ids)?;
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(self.cls);
        ids.extend_from_slice(q);
        ids.push(self.sep);
        Ok(TokenSequence::padded(ids, self.max_len, self.pad))
    }

    /// `[CLS] d [SEP]` with the document tail-truncated to fit `max_len`.
    pub fn doc_input(&self, doc_ids: &[u32]) -> TokenSequence {
        let d = &doc_ids[..doc_ids.len().min(self.max_len.saturating_sub(2))];
        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(self.cls);
        ids.extend_from_slice(d);
        ids.push(self.sep);
        TokenSequence::padded(ids, self.max_len, self.pad)
    }

    /// Feedback layout. The query keeps up to `query_budget` tokens; the
    /// documents are tail-truncated as one concatenated block so lower-ranked
    /// documents lose tokens first. Every document keeps its `[SEP]`.
    pub fn prf_input(&self, query_ids: &[u32], docs: &[Vec<u32>]) -> Result<PrfInput, EncoderError> {
        let q = self.query_tokens(query_ids)?;
        let fixed = 2 + q.len() + docs.len();
        if fixed > self.max_len {
            return Err(EncoderError::NoRoomForFeedback {
                max_len: self.max_len,
                k: docs.len(),
            });
        }
        let mut doc_budget = self.max_len - fixed;

        let mut ids = Vec::with_capacity(self.max_len);
        ids.push(self.cls);
        ids.extend_from_slice(q);
        ids.push(self.sep);
        let query_span = 1..1 + q.len();
        let mut doc_spans = Vec::with_capacity(docs.len());
        for d in docs {
            let keep = d.len().min(doc_budget);
            doc_budget -= keep;
            let start = ids.len();
            ids.extend_from_slice(&d[..keep]);
            doc_spans.push(start..start + keep);
            ids.push(self.sep);
        }
        Ok(PrfInput {
            seq: TokenSequence::padded(ids, self.max_len, self.pad),
            query_span,
            doc_spans,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLS: u32 = 2;
    const SEP: u32 = 3;
    const PAD: u32 = 0;

    fn layout(max_len: usize, budget: usize) -> InputLayout {
        InputLayout { max_len, query_budget: budget, cls: CLS, sep: SEP, pad: PAD }
    }

    #[test]
    fn query_input_layout() {
        let s = layout(8, 4).query_input(&[10, 11]).unwrap();
        assert_eq!(s.ids, vec![CLS, 10, 11, SEP, PAD, PAD, PAD, PAD]);
        assert_eq!(s.mask, vec![1, 1, 1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn long_query_is_tail_truncated() {
        let s = layout(16, 3).query_input(&[10, 11, 12, 13, 14]).unwrap();
        assert_eq!(s.real_ids(), &[CLS, 10, 11, 12, SEP]);
    }

    #[test]
    fn empty_query_is_an_error() {
        assert!(matches!(layout(8, 4).query_input(&[]), Err(EncoderError::EmptyQuery)));
    }

    #[test]
    fn zero_feedback_equals_query_input() {
        let l = layout(12, 4);
        let p = l.prf_input(&[10, 11, 12], &[]).unwrap();
        assert_eq!(p.seq, l.query_input(&[10, 11, 12]).unwrap());
        assert!(p.doc_spans.is_empty());
    }

    #[test]
    fn two_doc_layout_and_spans() {
        let p = layout(16, 4).prf_input(&[10], &[vec![20], vec![21]]).unwrap();
        assert_eq!(p.seq.real_ids(), &[CLS, 10, SEP, 20, SEP, 21, SEP]);
        assert_eq!(p.query_span, 1..2);
        assert_eq!(p.doc_spans, vec![3..4, 5..6]);
    }

    #[test]
    fn fully_truncated_document_keeps_empty_span() {
        // max_len 7: CLS q SEP | d1 tokens | SEP SEP  -> only 2 doc tokens fit
        let p = layout(7, 4).prf_input(&[10], &[vec![20, 21], vec![30, 31]]).unwrap();
        assert_eq!(p.seq.real_ids(), &[CLS, 10, SEP, 20, 21, SEP, SEP]);
        assert_eq!(p.doc_spans, vec![3..5, 6..6]);
    }

    #[test]
    fn too_many_documents_for_max_len() {
        let r = layout(4, 4).prf_input(&[10], &[vec![1], vec![2]]);
        assert!(matches!(r, Err(EncoderError::NoRoomForFeedback { .. })));
    }
}
