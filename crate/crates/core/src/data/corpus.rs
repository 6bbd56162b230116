use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Passages with unique ids, in file order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(DataError::Ingestion(format!("passage `{}` has empty text", p.id)));
            }
            if index.insert(p.id.clone(), i).is_some() {
                return Err(DataError::Ingestion(format!("duplicate passage id `{}`", p.id)));
            }
        }
        Ok(Self { passages, index })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.index.get(id).map(|&i| &self.passages[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.passages.iter().map(|p| p.text.as_str())
    }

    /// Writes `id<TAB>text` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for p in &self.passages {
            s.push_str(&p.id);
            s.push('\t');
            s.push_str(&p.text);
            s.push('\n');
        }
        s
    }
}

#[derive(Deserialize)]
struct Record {
    id: serde_json::Value,
    text: String,
}

/// Parses `id<TAB>text` lines or `{"id": .., "text": ..}` JSON lines.
/// Blank lines are skipped; anything else malformed is rejected with its
/// line number.
pub fn parse_corpus<R: BufRead>(reader: R, path: &str) -> Result<Corpus, DataError> {
    let mut passages = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::io(path, e))?;
        let bad = |message: String| DataError::Malformed {
            path: path.to_string(),
            line: lineno,
            message,
        };
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let passage = if trimmed.trim_start().starts_with('{') {
            let rec: Record = serde_json::from_str(trimmed).map_err(|e| bad(format!("invalid record: {e}")))?;
            let id = match rec.id {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                other => return Err(bad(format!("id must be a string or number, got {other}"))),
            };
            Passage { id, text: rec.text }
        } else {
            let (id, text) = trimmed
                .split_once('\t')
                .ok_or_else(|| bad("expected `id<TAB>text`".into()))?;
            Passage {
                id: id.to_string(),
                text: text.to_string(),
            }
        };
        if passage.id.trim().is_empty() {
            return Err(bad("empty id".into()));
        }
        if passage.text.trim().is_empty() {
            return Err(bad(format!("empty text for id `{}`", passage.id)));
        }
        if let Some(prev) = seen.insert(passage.id.clone(), lineno) {
            return Err(bad(format!("duplicate id `{}` (first seen on line {prev})", passage.id)));
        }
        passages.push(passage);
    }
    Corpus::new(passages)
}

pub fn read_corpus(path: &Path) -> Result<Corpus, DataError> {
    let f = std::fs::File::open(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
    parse_corpus(std::io::BufReader::new(f), &path.display().to_string())
}

/// Body token ids (no [CLS]/[SEP]) for every passage of a corpus.
#[derive(Debug, Clone)]
pub struct TokenizedCorpus {
    pub ids: Vec<String>,
    pub bodies: Vec<Vec<u32>>,
}

impl TokenizedCorpus {
    pub fn new(corpus: &Corpus, vocab: &Vocab) -> Self {
        Self {
            ids: corpus.passages().iter().map(|p| p.id.clone()).collect(),
            bodies: corpus.passages().iter().map(|p| vocab.encode_body(&p.text)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_both_formats() {
        let text = "p1\tfirst passage\n{\"id\": \"p2\", \"text\": \"second one\"}\n\n{\"id\": 7, \"text\": \"third\"}\n";
        let c = parse_corpus(text.as_bytes(), "mem").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.get("p2").unwrap().text, "second one");
        assert_eq!(c.get("7").unwrap().text, "third");
    }

    #[test]
    fn malformed_lines_are_line_numbered() {
        let err = parse_corpus("p1\tok\nno-tab-here\n".as_bytes(), "c.tsv").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
        let err = parse_corpus("p1\tok\n{\"id\": \"x\"}\n".as_bytes(), "c.jsonl").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
        let err = parse_corpus("p1\tok\np1\tagain\n".as_bytes(), "c.tsv").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = parse_corpus("p1\t   \n".as_bytes(), "c.tsv").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
    }

    #[test]
    fn tsv_round_trip() {
        let c = parse_corpus("a\tone two\nb\tthree\n".as_bytes(), "mem").unwrap();
        let again = parse_corpus(c.to_tsv().as_bytes(), "mem").unwrap();
        assert_eq!(c.passages(), again.passages());
    }
}
