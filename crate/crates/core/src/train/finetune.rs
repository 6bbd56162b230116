use std::io::BufRead;
use std::path::Path;

use numcore::{AdamWConfig, AdamWState, LrSchedule, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::FinetuneConfig;
use super::loss::loss_finetune;
use super::TrainError;
use crate::data::{wrap_body, Corpus, DataError, TokenBatch, Vocab};
use crate::model::{Model, Tower};

/// One line of a fine-tuning file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub query: String,
    pub positive_id: String,
    #[serde(default)]
    pub negative_ids: Vec<String>,
}

/// A triple resolved against a corpus: a tokenized query body and passage
/// positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetuneExample {
    pub query: Vec<u32>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    /// `(step, lr, loss)` per optimizer step.
    pub steps: Vec<(usize, f64, f64)>,
    /// Mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Parses line-delimited `{"query", "positive_id", "negative_ids"}` records.
pub fn parse_triples<R: BufRead>(reader: R, path: &str) -> Result<Vec<Triple>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Triple = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            path: path.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if t.positive_id.trim().is_empty() {
            return Err(DataError::Malformed {
                path: path.to_string(),
                line: i + 1,
                message: "query has no positive passage".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_triples(path: &Path) -> Result<Vec<Triple>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
    parse_triples(std::io::BufReader::new(file), &path.display().to_string())
}

/// Resolves passage ids and tokenizes queries. Unknown ids are data errors.
pub fn resolve_triples(triples: &[Triple], corpus: &Corpus, vocab: &Vocab) -> Result<Vec<FinetuneExample>, DataError> {
    triples
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let find = |id: &str| {
                corpus
                    .position(id)
                    .ok_or_else(|| DataError::Ingestion(format!("triple {}: passage `{id}` is not in the corpus", n + 1)))
            };
            Ok(FinetuneExample {
                query: vocab.encode_body(&t.query),
                positive: find(&t.positive_id)?,
                negatives: t.negative_ids.iter().map(|id| find(id)).collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

/// Fine-tunes with the contrastive retrieval loss: each query is scored
/// against its positive, its explicit negatives (topped up with random
/// passages to `config.negatives`) and every other passage in the batch.
pub fn run_finetune(
    config: &FinetuneConfig,
    mut model: Model<f32>,
    passages: &[Vec<u32>],
    examples: &[FinetuneExample],
) -> Result<(Model<f32>, FinetuneReport), TrainError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(TrainError::Config("no fine-tuning examples".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.positive >= passages.len() || ex.negatives.iter().any(|&n| n >= passages.len()) {
            return Err(TrainError::Contract(format!("example {i} refers to a passage out of range")));
        }
    }
    let per_epoch = examples.len().div_ceil(config.batch_size);
    let total = config.epochs * per_epoch;
    let schedule = LrSchedule::warmup_cosine(config.lr, total, config.warmup_ratio);
    let mut opt = AdamWState::for_store(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &model.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = FinetuneReport {
        steps: Vec::with_capacity(total),
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let lr = schedule.lr_at_step(step)?;
            let mut queries = Vec::with_capacity(chunk.len());
            let mut positives = Vec::with_capacity(chunk.len());
            let mut negatives = Vec::new();
            for &e in chunk {
                let ex = &examples[e];
                queries.push(wrap_body(&ex.query, config.query_max_len));
                positives.push(wrap_body(&passages[ex.positive], config.passage_max_len));
                let mut negs: Vec<usize> = ex.negatives.iter().copied().take(config.negatives).collect();
                // Top up with random passages when the file provides too few.
                let mut attempts = 0;
                while negs.len() < config.negatives && passages.len() > 1 && attempts < 100 * config.negatives {
                    attempts += 1;
                    let cand = rng.gen_range(0..passages.len());
                    if cand != ex.positive && !negs.contains(&cand) {
                        negs.push(cand);
                    }
                }
                negatives.extend(negs.into_iter().map(|n| wrap_body(&passages[n], config.passage_max_len)));
            }
            model.store.zero_grads();
            let tape = Tape::new();
            let q = model.encode(&tape, &TokenBatch::from_sequences(&queries), Tower::Query)?;
            let p = model.encode(&tape, &TokenBatch::from_sequences(&positives), Tower::Passage)?;
            let n = if negatives.is_empty() {
                None
            } else {
                Some(model.encode(&tape, &TokenBatch::from_sequences(&negatives), Tower::Passage)?.cls)
            };
            let loss = loss_finetune(&q.cls, &p.cls, n.as_ref())?;
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            loss.backward()?;
            model.store.accumulate_from(&tape)?;
            opt.step(&mut model.store, lr)?;
            report.steps.push((step, lr, value));
            epoch_sum += value;
        }
        report.epoch_losses.push(epoch_sum / per_epoch as f64);
    }
    model.store.zero_grads();
    Ok((model, report))
}
