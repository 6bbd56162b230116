use numcore::{clip_grad_norm, AdamWConfig, AdamWState, LrSchedule, NdArray, Tape, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Paradigm, StagePlan, TrainConfig};
use super::loss::{loss_masked, loss_infonce, total_loss, LossComponents};
use super::{param_digest, TrainError};
use crate::data::{
    make_bottleneck_batch, make_contrastive_batch, sample_coarse_span, MaskedBatch, SpanMode,
};
use crate::model::{EncoderOutput, Model, Tower};

/// Tokenized training material, indexed by passage position.
#[derive(Debug, Clone, Copy)]
pub struct PretrainData<'a> {
    /// Passage bodies (no specials).
    pub passages: &'a [Vec<u32>],
    /// Tokenized expansion queries per passage; empty where a passage has
    /// none.
    pub expansions: Option<&'a [Vec<Vec<u32>>]>,
}

/// Losses and learning rate of one optimizer step, averaged over its
/// micro-batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stage: u8,
    pub lr: f64,
    pub total: f64,
    pub enc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ext: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub paradigm: Paradigm,
    pub steps: Vec<StepLog>,
    /// Last step of stage 1 when a curriculum switches sources mid-run.
    pub stage_boundary: Option<usize>,
    /// Parameter digest after the last stage-1 update.
    pub stage1_final_digest: Option<String>,
    /// Parameter digest before the first stage-2 update.
    pub stage2_start_digest: Option<String>,
    /// Passages too short for span cropping, never drawn in stage 1.
    pub skipped_short_passages: usize,
    pub final_digest: String,
    /// Kept out of serialized reports so they stay reproducible; run
    /// manifests record it instead.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Mean total loss over steps `from..=to` (1-based, inclusive).
    pub fn mean_total(&self, from: usize, to: usize) -> f64 {
        let sel: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.step >= from && s.step <= to)
            .map(|s| s.total)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }
}

/// A checkpoint the caller may persist.
pub struct CheckpointEvent<'a> {
    /// `stage1` at a curriculum boundary, `final` at the end.
    pub label: &'static str,
    pub step: usize,
    pub model: &'a Model<f32>,
}

pub struct PretrainOutcome {
    pub model: Model<f32>,
    pub report: TrainReport,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    total: f64,
    enc: f64,
    dec: f64,
    ext: f64,
    cl: f64,
}

/// Runs pre-training from `model`'s current parameters. Stage 1 draws
/// coarse contexts (random crops for contrastive, the passage itself for
/// bottleneck); stage 2 pairs passages with their expansion queries. The
/// run is a pure function of the inputs and `config.seed`.
pub fn run_pretraining(
    config: &TrainConfig,
    mut model: Model<f32>,
    data: PretrainData<'_>,
    on_checkpoint: &mut dyn FnMut(CheckpointEvent<'_>) -> Result<(), TrainError>,
) -> Result<PretrainOutcome, TrainError> {
    config.validate()?;
    let started = std::time::Instant::now();
    let total = config.total_steps;
    let boundary = config.stage1_steps();

    let coarse_pool: Vec<usize> = match config.paradigm {
        Paradigm::Contrastive => (0..data.passages.len())
            .filter(|&i| data.passages[i].len() >= config.span_min)
            .collect(),
        Paradigm::Bottleneck => (0..data.passages.len()).filter(|&i| !data.passages[i].is_empty()).collect(),
    };
    let skipped = data.passages.len() - coarse_pool.len();
    if boundary > 0 && coarse_pool.len() < config.batch_size {
        return Err(TrainError::Config(format!(
            "only {} passages are usable as coarse contexts (span_min {}); batch_size is {}",
            coarse_pool.len(),
            config.span_min,
            config.batch_size
        )));
    }
    let expansion_pool: Vec<usize> = match data.expansions {
        Some(exp) => {
            if exp.len() != data.passages.len() {
                return Err(TrainError::Contract(format!(
                    "{} expansion lists for {} passages",
                    exp.len(),
                    data.passages.len()
                )));
            }
            (0..exp.len())
                .filter(|&i| exp[i].iter().any(|q| !q.is_empty()) && !data.passages[i].is_empty())
                .collect()
        }
        None => Vec::new(),
    };
    if config.needs_expansions() && expansion_pool.len() < config.batch_size {
        return Err(TrainError::Config(format!(
            "expansions cover {} passages but batch_size is {}; stage 2 needs distinct passages per batch",
            expansion_pool.len(),
            config.batch_size
        )));
    }

    let schedule = LrSchedule::warmup_cosine(config.peak_lr, total, config.warmup_ratio);
    let stage2_lr = match &config.plan {
        StagePlan::Curriculum { stage2_lr, .. } => match stage2_lr {
            Some(lr) => Some(*lr),
            None => Some(schedule.lr_at_step(boundary)?),
        },
        StagePlan::Single { .. } => None,
    };
    let curriculum_switch = matches!(config.plan, StagePlan::Curriculum { .. }) && boundary > 0 && boundary < total;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamWState::for_store(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &model.store,
    );
    let mut report = TrainReport {
        paradigm: config.paradigm,
        steps: Vec::with_capacity(total),
        stage_boundary: curriculum_switch.then_some(boundary),
        stage1_final_digest: None,
        stage2_start_digest: None,
        skipped_short_passages: skipped,
        final_digest: String::new(),
        wall_clock_secs: 0.0,
    };

    for step in 1..=total {
        let stage2 = step > boundary;
        if stage2 && step == boundary + 1 && curriculum_switch {
            report.stage2_start_digest = Some(param_digest(&model));
            tracing::info!(
                "stage boundary at step {boundary} of {total} ({:.0}% coarse); switching to expansion queries at lr {:.3e}",
                100.0 * boundary as f64 / total as f64,
                stage2_lr.unwrap_or_default()
            );
        }
        let lr = match (stage2, stage2_lr) {
            (true, Some(lr)) => lr,
            _ => schedule.lr_at_step(step)?,
        };
        model.store.zero_grads();
        let mut sums = Sums::default();
        for _ in 0..config.grad_accum {
            let pool = if stage2 { &expansion_pool } else { &coarse_pool };
            let picks: Vec<usize> = sample(&mut rng, pool.len(), config.batch_size)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            let tape = Tape::new();
            let (loss, parts) = micro_batch(config, &model, &tape, data, &picks, stage2, &mut rng)?;
            if !loss.item().is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            loss.scale(1.0 / config.grad_accum as f64).backward()?;
            model.store.accumulate_from(&tape)?;
            sums.total += loss.item() as f64;
            sums.enc += parts.enc;
            sums.dec += parts.dec;
            sums.ext += parts.ext;
            sums.cl += parts.cl;
        }
        if let Some(max) = config.max_grad_norm {
            clip_grad_norm(&mut model.store, max);
        }
        opt.step(&mut model.store, lr)?;
        let n = config.grad_accum as f64;
        let (bn, ct) = (config.paradigm == Paradigm::Bottleneck, config.paradigm == Paradigm::Contrastive);
        report.steps.push(StepLog {
            step,
            stage: if stage2 { 2 } else { 1 },
            lr,
            total: sums.total / n,
            enc: sums.enc / n,
            dec: bn.then_some(sums.dec / n),
            ext: ct.then_some(sums.ext / n),
            cl: ct.then_some(sums.cl / n),
        });
        if step % 100 == 0 || step == total {
            let last = report.steps.last().expect("just pushed");
            tracing::info!(step, stage = last.stage, lr = last.lr, loss = last.total, "pre-training");
        }
        if step == boundary && curriculum_switch {
            report.stage1_final_digest = Some(param_digest(&model));
            on_checkpoint(CheckpointEvent {
                label: "stage1",
                step,
                model: &model,
            })?;
        }
    }
    model.store.zero_grads();
    report.final_digest = param_digest(&model);
    on_checkpoint(CheckpointEvent {
        label: "final",
        step: total,
        model: &model,
    })?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(PretrainOutcome { model, report })
}

/// Masked-position logits of one tower, or `None` if nothing is masked.
fn masked_logits<'t>(
    model: &Model<f32>,
    tape: &'t Tape<f32>,
    states: &Var<'t, f32>,
    batch: &MaskedBatch,
    tower: Option<Tower>,
) -> Result<Option<(Var<'t, f32>, Vec<i64>)>, TrainError> {
    let (rows, labels) = batch.masked_flat();
    if rows.is_empty() {
        return Ok(None);
    }
    let picked = states.gather_rows(&rows)?;
    let logits = match tower {
        Some(t) => model.mlm_logits(tape, &picked, t)?,
        None => model.aux_project(tape, &picked)?,
    };
    Ok(Some((logits, labels)))
}

/// Mean masked cross-entropy pooled over several towers' positions.
fn pooled_masked_loss<'t>(
    tape: &'t Tape<f32>,
    parts: Vec<Option<(Var<'t, f32>, Vec<i64>)>>,
) -> Result<Var<'t, f32>, TrainError> {
    let parts: Vec<(Var<'t, f32>, Vec<i64>)> = parts.into_iter().flatten().collect();
    if parts.is_empty() {
        return Ok(tape.constant(NdArray::scalar(0.0)));
    }
    let logits: Vec<Var<'t, f32>> = parts.iter().map(|p| p.0).collect();
    let labels: Vec<i64> = parts.iter().flat_map(|p| p.1.iter().copied()).collect();
    let joined = if logits.len() == 1 { logits[0] } else { tape.concat_rows(&logits)? };
    Ok(loss_masked(&joined, &labels)?.loss)
}

fn aux_states<'t>(
    model: &Model<f32>,
    tape: &'t Tape<f32>,
    out: &EncoderOutput<'t, f32>,
) -> Result<Var<'t, f32>, TrainError> {
    let tapped = out.tapped(model.config().encoder.aux_tap_layer)?;
    Ok(model.aux_hidden(tape, &out.cls, &tapped, &out.key_mask, out.batch, out.seq_len)?)
}

fn micro_batch<'t>(
    config: &TrainConfig,
    model: &Model<f32>,
    tape: &'t Tape<f32>,
    data: PretrainData<'_>,
    picks: &[usize],
    stage2: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Var<'t, f32>, Sums), TrainError> {
    let body_max = config.passage_max_len - 2;
    let mut contexts = Vec::with_capacity(picks.len());
    let mut passages = Vec::with_capacity(picks.len());
    for &i in picks {
        let doc = &data.passages[i];
        if stage2 {
            let queries: Vec<&Vec<u32>> = data.expansions.expect("checked")[i].iter().filter(|q| !q.is_empty()).collect();
            let q = queries[rng.gen_range(0..queries.len())];
            passages.push(doc[..doc.len().min(body_max)].to_vec());
            contexts.push(q.clone());
        } else if config.paradigm == Paradigm::Contrastive {
            let pair = sample_coarse_span(doc, (config.span_min, config.span_max), SpanMode::Crop, body_max, rng)?;
            passages.push(pair.anchor_ids);
            contexts.push(pair.context_ids);
        } else {
            // The bottleneck paradigm's coarse context is the passage itself.
            let body = doc[..doc.len().min(body_max)].to_vec();
            passages.push(body.clone());
            contexts.push(body);
        }
    }
    let mut sums = Sums::default();
    let mut parts = LossComponents::default();
    match config.paradigm {
        Paradigm::Bottleneck => {
            let bb = make_bottleneck_batch(&passages, &contexts, config.passage_max_len, config.mask_ratio, rng)?;
            let out = model.encode(tape, &bb.encoder.tokens, Tower::Passage)?;
            let enc = pooled_masked_loss(
                tape,
                vec![masked_logits(model, tape, &out.hidden, &bb.encoder, Some(Tower::Passage))?],
            )?;
            let logits = model.bottleneck_decode(tape, &out.cls, &bb.context)?;
            let dec = super::loss::loss_bottleneck_clm(&logits, &bb.context)?.loss;
            sums.enc = enc.item() as f64;
            sums.dec = dec.item() as f64;
            parts.enc = Some(enc);
            parts.dec = Some(dec);
        }
        Paradigm::Contrastive => {
            let pairs: Vec<(Vec<u32>, Vec<u32>)> = passages.into_iter().zip(contexts).collect();
            let ctx_max = if stage2 { config.query_max_len } else { config.passage_max_len };
            let cb = make_contrastive_batch(&pairs, config.passage_max_len, ctx_max, config.mask_ratio, rng)?;
            let p = model.encode(tape, &cb.passages.tokens, Tower::Passage)?;
            let c = model.encode(tape, &cb.contexts.tokens, Tower::Query)?;
            let enc = pooled_masked_loss(
                tape,
                vec![
                    masked_logits(model, tape, &p.hidden, &cb.passages, Some(Tower::Passage))?,
                    masked_logits(model, tape, &c.hidden, &cb.contexts, Some(Tower::Query))?,
                ],
            )?;
            let p_aux = aux_states(model, tape, &p)?;
            let c_aux = aux_states(model, tape, &c)?;
            let ext = pooled_masked_loss(
                tape,
                vec![
                    masked_logits(model, tape, &p_aux, &cb.passages, None)?,
                    masked_logits(model, tape, &c_aux, &cb.contexts, None)?,
                ],
            )?;
            let cl = loss_infonce(&p.cls, &c.cls, config.symmetric_infonce)?;
            sums.enc = enc.item() as f64;
            sums.ext = ext.item() as f64;
            sums.cl = cl.item() as f64;
            parts.enc = Some(enc);
            parts.ext = Some(ext);
            parts.cl = Some(cl);
        }
    }
    let loss = total_loss(config.paradigm, &parts)?;
    Ok((loss, sums))
}
