use std::collections::HashSet;

use super::ExpandError;

/// Strips one leading enumeration marker: `1.`, `1)`, `-`, `*`, `•`, or a
/// `Q:` / `query:` label (case-insensitive).
fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    for bullet in ['-', '*', '•'] {
        if let Some(r) = line.strip_prefix(bullet) {
            return r.trim_start();
        }
    }
    for label in ["query:", "q:"] {
        if line.len() >= label.len()
            && line.is_char_boundary(label.len())
            && line[..label.len()].eq_ignore_ascii_case(label)
        {
            return line[label.len()..].trim_start();
        }
    }
    line
}

/// Splits a raw completion into queries: one per line, enumeration markers
/// removed, blank lines dropped, case-insensitive duplicates removed
/// (first occurrence wins).
pub fn parse_completion(raw: &str) -> Result<Vec<String>, ExpandError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        let q = strip_marker(line).trim();
        if q.is_empty() {
            continue;
        }
        if seen.insert(q.to_lowercase()) {
            out.push(q.to_string());
        }
    }
    if out.is_empty() {
        return Err(ExpandError::EmptyExpansion);
    }
    Ok(out)
}

/// Case-insensitive dedup of already-clean queries, dropping blanks.
pub(crate) fn dedup_queries(queries: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    queries
        .into_iter()
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty() && seen.insert(q.to_lowercase()))
        .collect()
}
