//! Transformer encoder used for queries, documents and feedback-augmented
//! queries.

mod checkpoint;
mod input;
mod model;
mod vocab;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use input::{InputLayout, PrfInput, TokenSequence};
pub use model::{EncoderConfig, EncoderParams, ForwardCache, LayerParams};
pub use vocab::{split_words, Vocabulary, CLS, PAD, SEP, SPECIALS, UNK};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("query is empty after tokenization")]
    EmptyQuery,
    #[error("max_len {max_len} leaves no room for {k} feedback documents")]
    NoRoomForFeedback { max_len: usize, k: usize },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("attention mask must be ones followed by tail padding")]
    BadMask,
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("bad vocabulary file: {0}")]
    BadVocab(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters together with the vocabulary-derived input layout.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub params: EncoderParams,
    pub layout: InputLayout,
}

impl Encoder {
    pub fn new(params: EncoderParams, vocab: &Vocabulary) -> Self {
        let layout = InputLayout::new(params.config.max_len, params.config.query_budget, vocab);
        Self { params, layout }
    }

    pub fn encode_query(&self, query_ids: &[u32]) -> Result<crate::EmbeddingVector, EncoderError> {
        self.params.encode(&self.layout.query_input(query_ids)?)
    }

    pub fn encode_doc(&self, doc_ids: &[u32]) -> Result<crate::EmbeddingVector, EncoderError> {
        self.params.encode(&self.layout.doc_input(doc_ids))
    }

    pub fn encode_prf(&self, query_ids: &[u32], docs: &[Vec<u32>]) -> Result<crate::EmbeddingVector, EncoderError> {
        self.params.encode(&self.layout.prf_input(query_ids, docs)?.seq)
    }
}
