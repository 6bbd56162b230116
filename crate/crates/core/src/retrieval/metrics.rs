use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Qrels, RetrievalError, RunRanking};

/// A ranking metric at a cutoff, written `mrr@10`, `recall@50`, `ndcg@10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Mrr(usize),
    Recall(usize),
    Ndcg(usize),
}

impl Metric {
    pub fn cutoff(self) -> usize {
        match self {
            Metric::Mrr(k) | Metric::Recall(k) | Metric::Ndcg(k) => k,
        }
    }

    pub fn compute(self, run: &RunRanking, qrels: &Qrels) -> MetricOutcome {
        match self {
            Metric::Mrr(k) => mrr_at_k(run, qrels, k),
            Metric::Recall(k) => recall_at_k(run, qrels, k),
            Metric::Ndcg(k) => ndcg_at_k(run, qrels, k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr(k) => write!(f, "mrr@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RetrievalError::Invalid(format!("unknown metric `{s}` (expected mrr@K, recall@K or ndcg@K)"));
        let (name, k) = s.trim().split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match name.to_ascii_lowercase().as_str() {
            "mrr" => Ok(Metric::Mrr(k)),
            "recall" => Ok(Metric::Recall(k)),
            "ndcg" => Ok(Metric::Ndcg(k)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Metric {
    type Error = RetrievalError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.to_string()
    }
}

/// Per-query values and their mean. Queries without judgments or without any
/// relevant passage are excluded and listed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricOutcome {
    pub mean: f64,
    pub per_query: Vec<(String, f64)>,
    pub excluded: Vec<String>,
}

fn per_query(
    run: &RunRanking,
    qrels: &Qrels,
    score: impl Fn(&[(String, f64)], &BTreeMap<String, u32>) -> f64,
) -> MetricOutcome {
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    for (qid, ranked) in &run.queries {
        match qrels.get(qid) {
            Some(judged) if judged.values().any(|&g| g >= 1) => values.push((qid.clone(), score(ranked, judged))),
            _ => excluded.push(qid.clone()),
        }
    }
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64
    };
    MetricOutcome {
        mean,
        per_query: values,
        excluded,
    }
}

fn grade(judged: &BTreeMap<String, u32>, pid: &str) -> u32 {
    judged.get(pid).copied().unwrap_or(0)
}

/// Reciprocal rank of the first passage with grade ≥ 1 within the top `k`.
pub fn mrr_at_k(run: &RunRanking, qrels: &Qrels, k: usize) -> MetricOutcome {
    per_query(run, qrels, |ranked, judged| {
        ranked
            .iter()
            .take(k)
            .position(|(pid, _)| grade(judged, pid) >= 1)
            .map_or(0.0, |r| 1.0 / (r + 1) as f64)
    })
}

/// Fraction of grade ≥ 1 passages found in the top `k`.
pub fn recall_at_k(run: &RunRanking, qrels: &Qrels, k: usize) -> MetricOutcome {
    per_query(run, qrels, |ranked, judged| {
        let relevant: HashSet<&str> = judged.iter().filter(|(_, &g)| g >= 1).map(|(p, _)| p.as_str()).collect();
        let found = ranked.iter().take(k).filter(|(pid, _)| relevant.contains(pid.as_str())).count();
        found as f64 / relevant.len() as f64
    })
}

/// nDCG with gain `2^grade − 1` and discount `log2(rank + 1)`.
pub fn ndcg_at_k(run: &RunRanking, qrels: &Qrels, k: usize) -> MetricOutcome {
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let discount = |i: usize| (i as f64 + 2.0).log2();
    per_query(run, qrels, |ranked, judged| {
        let dcg: f64 = ranked
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (pid, _))| gain(grade(judged, pid)) / discount(i))
            .sum();
        let mut grades: Vec<u32> = judged.values().copied().collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades.iter().take(k).enumerate().map(|(i, &g)| gain(g) / discount(i)).sum();
        if idcg > 0.0 {
            dcg / idcg
        } else {
            0.0
        }
    })
}
