//! Pre-training and fine-tuning objectives. Every masked or generative
//! cross-entropy is averaged over the positions that contribute to it.

use numcore::{Real, Var};

use super::{Paradigm, TrainError};
use crate::data::{ContextBatch, MaskedBatch, IGNORE_INDEX};

/// A scalar loss plus whether any position contributed to it.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<'t, T: Real> {
    pub loss: Var<'t, T>,
    /// No position contributed; `loss` is zero with zero gradient.
    pub empty: bool,
}

/// Mean cross-entropy of `logits` rows against `targets`, skipping
/// [`IGNORE_INDEX`].
pub fn loss_masked<'t, T: Real>(logits: &Var<'t, T>, targets: &[i64]) -> Result<LossTerm<'t, T>, TrainError> {
    let ce = logits.cross_entropy(targets, IGNORE_INDEX)?;
    Ok(LossTerm {
        empty: ce.is_empty(),
        loss: ce.loss,
    })
}

/// Masked-language-model loss over full-sequence logits
/// `[batch * seq_len, vocab]`: only positions in the mask set count.
pub fn loss_mlm<'t, T: Real>(logits: &Var<'t, T>, batch: &MaskedBatch) -> Result<LossTerm<'t, T>, TrainError> {
    check_rows(logits, batch.labels.len(), "MLM logits")?;
    loss_masked(logits, &batch.labels)
}

/// Auxiliary-head loss; the same masked contract as [`loss_mlm`].
pub fn loss_ext<'t, T: Real>(aux_logits: &Var<'t, T>, batch: &MaskedBatch) -> Result<LossTerm<'t, T>, TrainError> {
    check_rows(aux_logits, batch.labels.len(), "auxiliary logits")?;
    loss_masked(aux_logits, &batch.labels)
}

/// Next-token loss of the bottleneck decoder over `x_1 .. x_N, [SEP]`.
pub fn loss_bottleneck_clm<'t, T: Real>(
    decoder_logits: &Var<'t, T>,
    ctx: &ContextBatch,
) -> Result<LossTerm<'t, T>, TrainError> {
    if ctx.batch == 0 || ctx.len == 0 {
        return Err(TrainError::Contract("bottleneck targets are empty".into()));
    }
    check_rows(decoder_logits, ctx.targets.len(), "decoder logits")?;
    loss_masked(decoder_logits, &ctx.targets)
}

/// In-batch contrastive loss: row `i` of `contexts` is the positive of row
/// `i` of `passages`, every other row a negative. Scores are raw inner
/// products. With `symmetric`, the context-anchored direction is averaged
/// in.
pub fn loss_infonce<'t, T: Real>(
    passages: &Var<'t, T>,
    contexts: &Var<'t, T>,
    symmetric: bool,
) -> Result<Var<'t, T>, TrainError> {
    let (ps, cs) = (passages.shape(), contexts.shape());
    if ps.len() != 2 || ps != cs {
        return Err(TrainError::Contract(format!(
            "contrastive rows must align: {ps:?} vs {cs:?}"
        )));
    }
    let b = ps[0];
    if b < 2 {
        return Err(TrainError::Contract(format!(
            "contrastive loss needs at least 2 rows for in-batch negatives, got {b}"
        )));
    }
    let targets: Vec<i64> = (0..b as i64).collect();
    let forward = passages
        .matmul_t(contexts, false, true)?
        .cross_entropy(&targets, IGNORE_INDEX)?
        .loss;
    if !symmetric {
        return Ok(forward);
    }
    let backward = contexts
        .matmul_t(passages, false, true)?
        .cross_entropy(&targets, IGNORE_INDEX)?
        .loss;
    Ok(forward.add(&backward)?.scale(0.5))
}

/// Fine-tuning loss: query `i` is scored against every positive in the
/// batch and every explicit negative; its own positive is the target.
/// `positives` is `[B, d]`, `negatives` `[M, d]` with any `M >= 0`.
pub fn loss_finetune<'t, T: Real>(
    queries: &Var<'t, T>,
    positives: &Var<'t, T>,
    negatives: Option<&Var<'t, T>>,
) -> Result<Var<'t, T>, TrainError> {
    let (qs, ps) = (queries.shape(), positives.shape());
    if qs.len() != 2 || qs != ps {
        return Err(TrainError::Contract(format!("queries {qs:?} and positives {ps:?} must align")));
    }
    let candidates = match negatives {
        Some(n) => {
            if n.shape().len() != 2 || n.shape()[1] != qs[1] {
                return Err(TrainError::Contract(format!(
                    "negatives {:?} do not match dimension {}",
                    n.shape(),
                    qs[1]
                )));
            }
            queries.tape().concat_rows(&[*positives, *n])?
        }
        None => *positives,
    };
    let targets: Vec<i64> = (0..qs[0] as i64).collect();
    Ok(queries
        .matmul_t(&candidates, false, true)?
        .cross_entropy(&targets, IGNORE_INDEX)?
        .loss)
}

/// Loss components of one step; which ones are required depends on the
/// paradigm.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossComponents<'t, T: Real> {
    pub enc: Option<Var<'t, T>>,
    pub dec: Option<Var<'t, T>>,
    pub ext: Option<Var<'t, T>>,
    pub cl: Option<Var<'t, T>>,
}

/// Unweighted sum: `enc + dec` (bottleneck) or `enc + ext + cl`
/// (contrastive).
pub fn total_loss<'t, T: Real>(
    paradigm: Paradigm,
    parts: &LossComponents<'t, T>,
) -> Result<Var<'t, T>, TrainError> {
    let need = |v: Option<Var<'t, T>>, name: &str| {
        v.ok_or_else(|| TrainError::Contract(format!("{paradigm} loss is missing its {name} term")))
    };
    let enc = need(parts.enc, "encoder MLM")?;
    Ok(match paradigm {
        Paradigm::Bottleneck => enc.add(&need(parts.dec, "decoder")?)?,
        Paradigm::Contrastive => enc
            .add(&need(parts.ext, "auxiliary MLM")?)?
            .add(&need(parts.cl, "contrastive")?)?,
    })
}

fn check_rows<T: Real>(logits: &Var<'_, T>, rows: usize, what: &str) -> Result<(), TrainError> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != rows {
        return Err(TrainError::Contract(format!(
            "{what} {shape:?} do not align with {rows} target positions"
        )));
    }
    Ok(())
}
