//! Dense retrieval with a pseudo-relevance-feedback query encoder.
//!
//! A baseline dual encoder embeds queries and documents into one space and
//! retrieves by exact inner product. A second query encoder reads the query
//! together with the top-k first-pass documents and produces a refined query
//! embedding, which is searched against the unchanged document index.

pub mod analysis;
pub mod bm25;
pub mod config;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod index;
pub mod retrieval;
pub mod run;
pub mod train;
pub mod workflow;

pub use config::RunConfig;
pub use data::{DocumentRecord, QueryRecord, SyntheticSpec};
pub use encoder::{Encoder, EncoderConfig, EncoderError, EncoderParams, PrfInput, TokenSequence, Vocabulary};
pub use eval::{EvalError, Metric, MetricReport, Qrels};
pub use index::{EmbeddingVector, FlatIndex, IndexError, ScoredHit};
pub use run::RunList;
