//! Pre-training objectives and loops (bottleneck and contrastive, with the
//! two-stage curriculum) and retrieval fine-tuning.

mod config;
mod finetune;
mod loss;
mod pretrain;

use numcore::NumError;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::data::DataError;
use crate::model::{Model, ModelError};

pub use config::{ContextSource, FinetuneConfig, Paradigm, StagePlan, TrainConfig};
pub use finetune::{
    parse_triples, read_triples, resolve_triples, run_finetune, FinetuneExample, FinetuneReport, Triple,
};
pub use loss::{
    loss_bottleneck_clm, loss_ext, loss_finetune, loss_infonce, loss_masked, loss_mlm, total_loss, LossComponents,
    LossTerm,
};
pub use pretrain::{run_pretraining, CheckpointEvent, PretrainData, PretrainOutcome, StepLog, TrainReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
}

/// SHA-256 over every parameter's name, shape and raw bytes, in store
/// order.
pub fn param_digest(model: &Model<f32>) -> String {
    let mut h = Sha256::new();
    for id in model.store.ids() {
        let p = model.store.get(id);
        h.update(model.store.name(id).as_bytes());
        for &d in p.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in p.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests;
