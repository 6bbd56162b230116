use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{encode_texts, search_topk, EmbeddingMatrix, EncodeOptions, Metric, Qrels, RetrievalError, SearchOutcome};
use crate::data::{Corpus, Vocab};
use crate::model::{Model, Tower};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Ranking depth written to the run file; raised to the largest metric
    /// cutoff when smaller.
    pub depth: usize,
    pub batch_size: usize,
    pub shards: usize,
    pub passage_max_len: usize,
    pub query_max_len: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            depth: 100,
            batch_size: 64,
            shards: 1,
            passage_max_len: 128,
            query_max_len: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub checkpoint: String,
    /// Queries with at least one relevant passage.
    pub query_count: usize,
    /// Queries skipped for lacking judgments.
    pub excluded: Vec<String>,
    /// Mean of each metric, in request order.
    pub means: Vec<(Metric, f64)>,
    /// query id → metric name → value.
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MetricReport {
    /// Scores a ranking against judgments.
    pub fn from_run(run: &super::RunRanking, qrels: &Qrels, metrics: &[Metric], checkpoint: &str) -> Self {
        let mut means = Vec::new();
        let mut per_query: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let judged = |qid: &String| qrels.get(qid).is_some_and(|j| j.values().any(|&g| g >= 1));
        let excluded: Vec<String> = run.queries.iter().map(|(q, _)| q).filter(|q| !judged(q)).cloned().collect();
        for &m in metrics {
            let out = m.compute(run, qrels);
            for (qid, v) in out.per_query {
                per_query.entry(qid).or_default().insert(m.to_string(), v);
            }
            means.push((m, out.mean));
        }
        Self {
            checkpoint: checkpoint.to_string(),
            query_count: run.queries.len() - excluded.len(),
            excluded,
            means,
            per_query,
        }
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.means.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v)
    }

    /// A summary record followed by one record per query.
    pub fn to_jsonl(&self) -> String {
        let means: serde_json::Map<String, serde_json::Value> =
            self.means.iter().map(|(m, v)| (m.to_string(), (*v).into())).collect();
        let mut out = serde_json::json!({
            "checkpoint": self.checkpoint,
            "queries": self.query_count,
            "excluded": self.excluded,
            "means": means,
        })
        .to_string();
        out.push('\n');
        for (qid, values) in &self.per_query {
            out.push_str(&serde_json::json!({ "query_id": qid, "values": values }).to_string());
            out.push('\n');
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("checkpoint: {}\nqueries: {}", self.checkpoint, self.query_count);
        if !self.excluded.is_empty() {
            out.push_str(&format!(" ({} excluded without relevant passages)", self.excluded.len()));
        }
        out.push('\n');
        for (m, v) in &self.means {
            out.push_str(&format!("{:<12} {:.4}\n", m.to_string(), v));
        }
        out
    }
}

/// Ranks embedded passages for embedded queries and scores the ranking.
pub fn evaluate_embeddings(
    queries: &EmbeddingMatrix,
    passages: &EmbeddingMatrix,
    qrels: &Qrels,
    metrics: &[Metric],
    depth: usize,
    checkpoint: &str,
) -> Result<(MetricReport, SearchOutcome), RetrievalError> {
    let depth = metrics.iter().map(|m| m.cutoff()).fold(depth.max(1), usize::max);
    let search = search_topk(queries, passages, depth)?;
    let report = MetricReport::from_run(&search.run, qrels, metrics, checkpoint);
    Ok((report, search))
}

/// Encodes corpus and queries with `model`, searches, and scores.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &Model<f32>,
    vocab: &Vocab,
    corpus: &Corpus,
    queries: &Corpus,
    qrels: &Qrels,
    metrics: &[Metric],
    opts: EvalOptions,
    checkpoint: &str,
) -> Result<(MetricReport, SearchOutcome), RetrievalError> {
    let items = |c: &Corpus| -> Vec<(String, String)> { c.passages().iter().map(|p| (p.id.clone(), p.text.clone())).collect() };
    let encode = |c: &Corpus, tower, max_len| {
        encode_texts(
            model,
            vocab,
            &items(c),
            EncodeOptions {
                tower,
                max_len,
                batch_size: opts.batch_size,
                shards: opts.shards,
            },
        )
    };
    let p = encode(corpus, Tower::Passage, opts.passage_max_len)?;
    let q = encode(queries, Tower::Query, opts.query_max_len)?;
    evaluate_embeddings(&q, &p, qrels, metrics, opts.depth, checkpoint)
}
