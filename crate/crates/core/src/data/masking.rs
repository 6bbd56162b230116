use rand::seq::index::sample;
use rand::Rng;

use super::vocab::{Vocab, MASK};
use super::DataError;

/// Label value for positions that do not contribute to a masked loss.
pub const IGNORE_INDEX: i64 = -100;

/// One sequence after masking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedRow {
    pub input_ids: Vec<u32>,
    /// Original token at masked positions, [`IGNORE_INDEX`] elsewhere.
    pub labels: Vec<i64>,
    /// Sorted masked positions.
    pub mask_positions: Vec<usize>,
    /// Set when the row had no maskable (non-special) token.
    pub nothing_to_mask: bool,
}

/// Replaces `round(ratio * n_maskable)` uniformly chosen non-special
/// positions with `[m]`.
pub fn apply_mask<R: Rng + ?Sized>(ids: &[u32], mask_ratio: f64, rng: &mut R) -> Result<MaskedRow, DataError> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(DataError::MaskRatio(mask_ratio));
    }
    let maskable: Vec<usize> = (0..ids.len()).filter(|&i| !Vocab::is_special(ids[i])).collect();
    let mut row = MaskedRow {
        input_ids: ids.to_vec(),
        labels: vec![IGNORE_INDEX; ids.len()],
        mask_positions: Vec::new(),
        nothing_to_mask: maskable.is_empty(),
    };
    let k = (mask_ratio * maskable.len() as f64).round() as usize;
    if k == 0 {
        return Ok(row);
    }
    let mut picked: Vec<usize> = sample(rng, maskable.len(), k).into_iter().map(|j| maskable[j]).collect();
    picked.sort_unstable();
    for &p in &picked {
        row.labels[p] = i64::from(ids[p]);
        row.input_ids[p] = MASK;
    }
    row.mask_positions = picked;
    Ok(row)
}
