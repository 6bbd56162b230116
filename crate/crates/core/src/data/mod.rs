//! Corpus ingestion, vocabulary, tokenization, masking, span sampling and
//! batch assembly.

mod batch;
mod corpus;
mod masking;
mod span;
mod vocab;

pub use batch::{
    make_bottleneck_batch, make_contrastive_batch, BottleneckBatch, ContextBatch, ContrastiveBatch, MaskedBatch,
    TokenBatch,
};
pub use corpus::{parse_corpus, read_corpus, Corpus, Passage, TokenizedCorpus};
pub use masking::{apply_mask, MaskedRow, IGNORE_INDEX};
pub use span::{sample_coarse_span, SpanMode, SpanPair};
pub use vocab::{words, wrap_body, Vocab, CLS, MASK, NUM_SPECIALS, PAD, SEP, SPECIAL_TOKENS, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("mask ratio {0} outside [0, 1)")]
    MaskRatio(f64),
    #[error("document of {len} tokens is shorter than the minimum span {min}")]
    DocumentTooShort { len: usize, min: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
