use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use super::RunRanking;
use crate::data::DataError;

/// query id → passage id → relevance grade.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

/// Parses TREC qrels lines `qid iter pid grade`.
pub fn parse_qrels<R: BufRead>(reader: R, path: &str) -> Result<Qrels, DataError> {
    let mut qrels = Qrels::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DataError::Malformed {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _, pid, grade] = fields[..] else {
            return Err(malformed(format!("expected 4 fields `qid 0 pid grade`, found {}", fields.len())));
        };
        let grade: u32 = grade
            .parse()
            .map_err(|_| malformed(format!("grade `{grade}` is not a non-negative integer")))?;
        qrels.entry(qid.to_string()).or_default().insert(pid.to_string(), grade);
    }
    Ok(qrels)
}

pub fn read_qrels(path: &Path) -> Result<Qrels, DataError> {
    let f = std::fs::File::open(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
    parse_qrels(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn qrels_to_string(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (qid, judged) in qrels {
        for (pid, g) in judged {
            out.push_str(&format!("{qid} 0 {pid} {g}\n"));
        }
    }
    out
}

/// TREC run lines `qid Q0 pid rank score tag`.
pub fn run_to_string(run: &RunRanking, tag: &str) -> String {
    let mut out = String::new();
    for (qid, ranked) in &run.queries {
        for (rank, (pid, score)) in ranked.iter().enumerate() {
            out.push_str(&format!("{qid} Q0 {pid} {} {score:.6} {tag}\n", rank + 1));
        }
    }
    out
}

/// Parses a TREC run; lines are re-sorted by rank within each query.
pub fn parse_run<R: BufRead>(reader: R, path: &str) -> Result<RunRanking, DataError> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DataError::Malformed {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _, pid, rank, score, _] = fields[..] else {
            return Err(malformed(format!("expected 6 fields, found {}", fields.len())));
        };
        let rank: usize = rank.parse().map_err(|_| malformed(format!("bad rank `{rank}`")))?;
        let score: f64 = score.parse().map_err(|_| malformed(format!("bad score `{score}`")))?;
        if !rows.contains_key(qid) {
            order.push(qid.to_string());
        }
        rows.entry(qid.to_string()).or_default().push((rank, pid.to_string(), score));
    }
    let mut run = RunRanking::default();
    for qid in order {
        let mut r = rows.remove(&qid).expect("present");
        r.sort_by_key(|(rank, _, _)| *rank);
        run.queries.push((qid, r.into_iter().map(|(_, p, s)| (p, s)).collect()));
    }
    Ok(run)
}
