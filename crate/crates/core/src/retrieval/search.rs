use std::cmp::Ordering;

use super::{EmbeddingMatrix, RetrievalError};

/// Ranked `(passage_id, score)` lists per query, in query order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRanking {
    pub queries: Vec<(String, Vec<(String, f64)>)>,
}

impl RunRanking {
    pub fn get(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.queries.iter().find(|(q, _)| q == query_id).map(|(_, r)| r.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub run: RunRanking,
    /// Set when `k` exceeded the corpus size and was clipped.
    pub clipped_to: Option<usize>,
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Higher score first, then ascending passage id.
pub(crate) fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Exact top-`k` by inner product. Equal scores are ordered by ascending
/// passage id.
pub fn search_topk(queries: &EmbeddingMatrix, passages: &EmbeddingMatrix, k: usize) -> Result<SearchOutcome, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::Invalid("k must be at least 1".into()));
    }
    if queries.dim() != passages.dim() {
        return Err(RetrievalError::DimensionMismatch {
            queries: queries.dim(),
            passages: passages.dim(),
        });
    }
    let clipped_to = (k > passages.len()).then_some(passages.len());
    let k = k.min(passages.len());
    let pids = passages.ids();
    let mut run = RunRanking::default();
    for (qi, qid) in queries.ids().iter().enumerate() {
        let q = queries.row(qi);
        let mut scored: Vec<(f64, &str)> = (0..passages.len()).map(|p| (dot(q, passages.row(p)), pids[p].as_str())).collect();
        if k > 0 && k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank_order);
        run.queries
            .push((qid.clone(), scored.into_iter().map(|(s, id)| (id.to_string(), s)).collect()));
    }
    Ok(SearchOutcome { run, clipped_to })
}
