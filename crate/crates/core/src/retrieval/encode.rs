use std::collections::HashSet;

use super::RetrievalError;
use crate::data::{DataError, TokenBatch, Vocab};
use crate::model::{Model, Tower};

/// One vector per id, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self, RetrievalError> {
        if data.len() != ids.len() * dim {
            return Err(RetrievalError::Invalid(format!(
                "{} ids × {dim} dims needs {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(DataError::Ingestion(format!("duplicate id `{dup}`")).into());
        }
        Ok(Self { ids, dim, data })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Little-endian f32 bytes of all rows, for digests.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub tower: Tower,
    pub max_len: usize,
    pub batch_size: usize,
    /// Worker threads. Batches are formed in input order before being
    /// distributed, so the output does not depend on this value.
    pub shards: usize,
}

/// Encodes `(id, text)` items into [CLS] vectors.
pub fn encode_texts(
    model: &Model<f32>,
    vocab: &Vocab,
    items: &[(String, String)],
    opts: EncodeOptions,
) -> Result<EmbeddingMatrix, RetrievalError> {
    if opts.batch_size == 0 || opts.shards == 0 {
        return Err(RetrievalError::Invalid("batch size and shard count must be positive".into()));
    }
    let max_len = opts.max_len.min(model.config().encoder.max_seq_len);
    let d = model.d_model();
    let ids: Vec<String> = items.iter().map(|(id, _)| id.clone()).collect();
    let batches: Vec<&[(String, String)]> = items.chunks(opts.batch_size).collect();
    let encode_batch = |chunk: &[(String, String)]| -> Result<Vec<f32>, RetrievalError> {
        let seqs: Vec<Vec<u32>> = chunk.iter().map(|(_, t)| vocab.tokenize(t, max_len)).collect();
        let pooled = model.embed(&TokenBatch::from_sequences(&seqs), opts.tower)?;
        Ok(pooled.into_iter().flat_map(|p| p.0).collect())
    };
    let mut outputs: Vec<Option<Result<Vec<f32>, RetrievalError>>> = (0..batches.len()).map(|_| None).collect();
    if opts.shards == 1 || batches.len() <= 1 {
        for (slot, b) in outputs.iter_mut().zip(&batches) {
            *slot = Some(encode_batch(b));
        }
    } else {
        let per = batches.len().div_ceil(opts.shards);
        std::thread::scope(|s| {
            for (slots, group) in outputs.chunks_mut(per).zip(batches.chunks(per)) {
                let encode_batch = &encode_batch;
                s.spawn(move || {
                    for (slot, b) in slots.iter_mut().zip(group) {
                        *slot = Some(encode_batch(b));
                    }
                });
            }
        });
    }
    let mut data = Vec::with_capacity(items.len() * d);
    for o in outputs {
        data.extend(o.expect("every batch encoded")?);
    }
    EmbeddingMatrix::new(ids, d, data)
}
