use std::collections::HashMap;
use std::io::BufRead;

use super::DataError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[m]"];

/// Lowercased word tokens: alphanumeric runs, with every other
/// non-whitespace character as a token of its own.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Word-level vocabulary. Ids `0..NUM_SPECIALS` are the special tokens; the
/// body follows in descending frequency order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_body(body: Vec<String>) -> Result<Self, String> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(body);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(format!("duplicate token `{t}`"));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary of at most `max_size` entries (specials
    /// included) from words seen at least `min_freq` times. Ties in
    /// frequency are broken lexicographically.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_size: usize,
        min_freq: usize,
    ) -> Result<Self, DataError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut n_texts = 0;
        for text in texts {
            n_texts += 1;
            for w in words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if n_texts == 0 {
            return Err(DataError::Ingestion("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !SPECIAL_TOKENS.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size.saturating_sub(NUM_SPECIALS));
        Self::from_body(ranked.into_iter().map(|(w, _)| w).collect()).map_err(DataError::Ingestion)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn body(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Word ids without [CLS]/[SEP]; out-of-vocabulary words map to [UNK].
    pub fn encode_body(&self, text: &str) -> Vec<u32> {
        words(text)
            .iter()
            .map(|w| match self.index.get(w) {
                Some(&id) if !Self::is_special(id) => id,
                _ => UNK,
            })
            .collect()
    }

    /// `[CLS] body [SEP]`, truncated to `max_len` while keeping the final
    /// [SEP].
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<u32> {
        wrap_body(&self.encode_body(text), max_len)
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id) || id == UNK)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One body token per line; line `i` holds id `NUM_SPECIALS + i`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.body() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse<R: BufRead>(reader: R, path: &str) -> Result<Self, DataError> {
        let mut body = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| DataError::io(path, e))?;
            let bad = |message: &str| DataError::Malformed {
                path: path.to_string(),
                line: i + 1,
                message: message.to_string(),
            };
            if line.is_empty() {
                return Err(bad("empty token line"));
            }
            if line.chars().any(char::is_whitespace) {
                return Err(bad("token contains whitespace"));
            }
            if SPECIAL_TOKENS.contains(&line.as_str()) {
                return Err(bad("special token in vocabulary body"));
            }
            body.push(line);
        }
        Self::from_body(body).map_err(|m| DataError::Malformed {
            path: path.to_string(),
            line: 0,
            message: m,
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self, DataError> {
        let f = std::fs::File::open(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
        Self::parse(std::io::BufReader::new(f), &path.display().to_string())
    }

    pub fn from_tokens(body: Vec<String>) -> Result<Self, DataError> {
        Self::from_body(body).map_err(DataError::Ingestion)
    }
}

/// Wraps body ids as `[CLS] .. [SEP]` within `max_len` (at least 2).
pub fn wrap_body(body: &[u32], max_len: usize) -> Vec<u32> {
    let keep = body.len().min(max_len.max(2) - 2);
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(CLS);
    ids.extend_from_slice(&body[..keep]);
    ids.push(SEP);
    ids
}
