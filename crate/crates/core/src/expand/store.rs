use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExpandError;
use crate::checkpoint::write_file_atomic;
use crate::data::{Corpus, Vocab};

/// Generated pseudo-queries for one passage; one line of an expansion file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedQueries {
    pub passage_id: String,
    pub queries: Vec<String>,
    /// `synthetic` or `remote:<model>`.
    pub generator: String,
    /// Generation settings used, echoed verbatim.
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub created_at: String,
}

/// Result of loading an expansion file against a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedExpansions {
    /// Records whose passage exists, in file order.
    pub records: Vec<ExpandedQueries>,
    /// Ids of skipped records whose passage is not in the corpus.
    pub orphans: Vec<String>,
}

impl LoadedExpansions {
    /// passage id → queries. Later records for the same passage append.
    pub fn map(&self) -> BTreeMap<String, Vec<String>> {
        let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &self.records {
            m.entry(r.passage_id.clone()).or_default().extend(r.queries.iter().cloned());
        }
        m
    }

    /// Tokenized query bodies aligned with corpus order; passages without
    /// expansions get an empty list.
    pub fn aligned(&self, corpus: &Corpus, vocab: &Vocab) -> Vec<Vec<Vec<u32>>> {
        let mut out = vec![Vec::new(); corpus.len()];
        for r in &self.records {
            let i = corpus.position(&r.passage_id).expect("validated at load");
            out[i].extend(r.queries.iter().map(|q| vocab.encode_body(q)).filter(|b| !b.is_empty()));
        }
        out
    }

    pub fn total_queries(&self) -> usize {
        self.records.iter().map(|r| r.queries.len()).sum()
    }
}

pub fn expansions_to_jsonl(records: &[ExpandedQueries]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes records as JSON lines, atomically.
pub fn persist_expansions(path: &Path, records: &[ExpandedQueries]) -> Result<(), ExpandError> {
    for r in records {
        if r.queries.is_empty() || r.queries.iter().any(|q| q.trim().is_empty()) {
            return Err(ExpandError::Config(format!("record for `{}` has empty queries", r.passage_id)));
        }
    }
    write_file_atomic(path, expansions_to_jsonl(records).as_bytes()).map_err(|source| ExpandError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses an expansion file. Records for passages missing from `corpus` are
/// skipped and listed in `orphans`; unreadable lines are errors.
pub fn parse_expansions<R: BufRead>(reader: R, path: &str, corpus: &Corpus) -> Result<LoadedExpansions, ExpandError> {
    let mut loaded = LoadedExpansions::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ExpandError::Io {
            path: path.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| ExpandError::Malformed {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let r: ExpandedQueries = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if r.queries.is_empty() || r.queries.iter().any(|q| q.trim().is_empty()) {
            return Err(malformed("record has no queries or an empty query".into()));
        }
        if corpus.contains(&r.passage_id) {
            loaded.records.push(r);
        } else {
            loaded.orphans.push(r.passage_id);
        }
    }
    Ok(loaded)
}

pub fn load_expansions(path: &Path, corpus: &Corpus) -> Result<LoadedExpansions, ExpandError> {
    let io = |source| ExpandError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    parse_expansions(std::io::BufReader::new(file), &path.display().to_string(), corpus)
}
