//! Corpus and query encoding, exact inner-product search, and ranking
//! metrics.

mod encode;
mod evaluate;
mod metrics;
mod search;
mod trec;

pub use encode::{encode_texts, EmbeddingMatrix, EncodeOptions};
pub use evaluate::{evaluate, evaluate_embeddings, EvalOptions, MetricReport};
pub use metrics::{mrr_at_k, ndcg_at_k, recall_at_k, Metric, MetricOutcome};
pub use search::{search_topk, RunRanking, SearchOutcome};
pub use trec::{parse_qrels, parse_run, qrels_to_string, read_qrels, run_to_string, Qrels};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("embedding dimensions differ: queries {queries}, passages {passages}")]
    DimensionMismatch { queries: usize, passages: usize },
    #[error("invalid request: {0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests;
