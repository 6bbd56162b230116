//! Dense passage retriever pre-training with document-expansion queries.

pub mod checkpoint;
pub mod data;
pub mod expand;
pub mod model;
pub mod retrieval;
pub mod study;
pub mod synth;
pub mod train;
