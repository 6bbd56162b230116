use rand::Rng;

use super::masking::{apply_mask, MaskedRow, IGNORE_INDEX};
use super::vocab::{wrap_body, PAD, SEP};
use super::DataError;

/// Padded token ids with a key mask, `batch x seq_len` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    pub batch: usize,
    pub seq_len: usize,
}

impl TokenBatch {
    pub fn from_sequences(seqs: &[Vec<u32>]) -> Self {
        let seq_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut attention_mask = Vec::with_capacity(seqs.len() * seq_len);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(PAD).take(seq_len - s.len()));
            attention_mask.extend(std::iter::repeat(true).take(s.len()));
            attention_mask.extend(std::iter::repeat(false).take(seq_len - s.len()));
        }
        Self {
            ids,
            attention_mask,
            batch: seqs.len(),
            seq_len,
        }
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn row_len(&self, b: usize) -> usize {
        self.attention_mask[b * self.seq_len..(b + 1) * self.seq_len]
            .iter()
            .filter(|&&m| m)
            .count()
    }
}

/// Masked encoder inputs for a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub tokens: TokenBatch,
    /// `batch x seq_len`, [`IGNORE_INDEX`] except at masked positions.
    pub labels: Vec<i64>,
    pub mask_positions: Vec<Vec<usize>>,
    /// Rows that had nothing to mask.
    pub empty_rows: usize,
}

impl MaskedBatch {
    pub fn from_rows(rows: Vec<MaskedRow>) -> Self {
        let seqs: Vec<Vec<u32>> = rows.iter().map(|r| r.input_ids.clone()).collect();
        let tokens = TokenBatch::from_sequences(&seqs);
        let mut labels = Vec::with_capacity(tokens.ids.len());
        for r in &rows {
            labels.extend_from_slice(&r.labels);
            labels.extend(std::iter::repeat(IGNORE_INDEX).take(tokens.seq_len - r.labels.len()));
        }
        Self {
            empty_rows: rows.iter().filter(|r| r.mask_positions.is_empty()).count(),
            mask_positions: rows.into_iter().map(|r| r.mask_positions).collect(),
            tokens,
            labels,
        }
    }

    /// Flattened `(row * seq_len + pos)` indices of masked positions, with
    /// their labels.
    pub fn masked_flat(&self) -> (Vec<usize>, Vec<i64>) {
        let mut idx = Vec::new();
        let mut lab = Vec::new();
        for (b, positions) in self.mask_positions.iter().enumerate() {
            for &p in positions {
                let flat = b * self.tokens.seq_len + p;
                idx.push(flat);
                lab.push(self.labels[flat]);
            }
        }
        (idx, lab)
    }

    pub fn n_masked(&self) -> usize {
        self.mask_positions.iter().map(Vec::len).sum()
    }
}

/// Passage tower and aligned context tower; row `i` of `contexts` is the
/// positive for row `i` of `passages`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveBatch {
    pub passages: MaskedBatch,
    pub contexts: MaskedBatch,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.passages.tokens.batch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn negatives_per_row(&self) -> usize {
        self.len().saturating_sub(1)
    }
}

/// Builds a contrastive batch from `(passage_body, context_body)` pairs,
/// masking both towers at `mask_ratio`.
pub fn make_contrastive_batch<R: Rng + ?Sized>(
    pairs: &[(Vec<u32>, Vec<u32>)],
    passage_max_len: usize,
    context_max_len: usize,
    mask_ratio: f64,
    rng: &mut R,
) -> Result<ContrastiveBatch, DataError> {
    if pairs.len() < 2 {
        return Err(DataError::Contract(format!(
            "contrastive batch needs at least 2 pairs for in-batch negatives, got {}",
            pairs.len()
        )));
    }
    let mut p_rows = Vec::with_capacity(pairs.len());
    let mut c_rows = Vec::with_capacity(pairs.len());
    for (p, c) in pairs {
        p_rows.push(apply_mask(&wrap_body(p, passage_max_len), mask_ratio, rng)?);
        c_rows.push(apply_mask(&wrap_body(c, context_max_len), mask_ratio, rng)?);
    }
    Ok(ContrastiveBatch {
        passages: MaskedBatch::from_rows(p_rows),
        contexts: MaskedBatch::from_rows(c_rows),
    })
}

/// Decoder side of the bottleneck objective: unmasked context tokens as
/// teacher-forced inputs and the same tokens plus `[SEP]` as targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextBatch {
    /// `batch x len`, padded with [PAD].
    pub inputs: Vec<u32>,
    /// `batch x (len + 1)`; position 0 predicts `x_1`, position `n` of a
    /// row of length `n` predicts `[SEP]`.
    pub targets: Vec<i64>,
    pub lens: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl ContextBatch {
    pub fn new(contexts: &[Vec<u32>]) -> Result<Self, DataError> {
        if let Some(i) = contexts.iter().position(Vec::is_empty) {
            return Err(DataError::Contract(format!("context {i} is empty")));
        }
        let len = contexts.iter().map(Vec::len).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(contexts.len() * len);
        let mut targets = Vec::with_capacity(contexts.len() * (len + 1));
        for c in contexts {
            inputs.extend_from_slice(c);
            inputs.extend(std::iter::repeat(PAD).take(len - c.len()));
            targets.extend(c.iter().map(|&t| i64::from(t)));
            targets.push(i64::from(SEP));
            targets.extend(std::iter::repeat(IGNORE_INDEX).take(len - c.len()));
        }
        Ok(Self {
            inputs,
            targets,
            lens: contexts.iter().map(Vec::len).collect(),
            batch: contexts.len(),
            len,
        })
    }

    pub fn row_targets(&self, b: usize) -> &[i64] {
        &self.targets[b * (self.len + 1)..(b + 1) * (self.len + 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BottleneckBatch {
    pub encoder: MaskedBatch,
    pub context: ContextBatch,
}

/// Masks the passages for the encoder; contexts (truncated to
/// `max_len - 1` so `[h_cls] + context` fits the decoder) stay unmasked.
pub fn make_bottleneck_batch<R: Rng + ?Sized>(
    passages: &[Vec<u32>],
    contexts: &[Vec<u32>],
    max_len: usize,
    mask_ratio: f64,
    rng: &mut R,
) -> Result<BottleneckBatch, DataError> {
    if passages.len() != contexts.len() || passages.is_empty() {
        return Err(DataError::Contract(format!(
            "bottleneck batch needs aligned, non-empty inputs ({} passages, {} contexts)",
            passages.len(),
            contexts.len()
        )));
    }
    let mut rows = Vec::with_capacity(passages.len());
    for p in passages {
        rows.push(apply_mask(&wrap_body(p, max_len), mask_ratio, rng)?);
    }
    let ctx: Vec<Vec<u32>> = contexts
        .iter()
        .map(|c| c[..c.len().min(max_len.saturating_sub(1))].to_vec())
        .collect();
    Ok(BottleneckBatch {
        encoder: MaskedBatch::from_rows(rows),
        context: ContextBatch::new(&ctx)?,
    })
}
