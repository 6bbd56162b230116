use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::parse::dedup_queries;
use super::{ExpandError, ExpandedQueries};
use crate::data::Passage;
use crate::data::words;

/// Function words ignored when ranking passage terms.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "may", "more", "most", "no", "not", "of", "on", "one", "or", "other", "our", "she",
    "so", "some", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "to", "up", "was", "we", "were", "what", "when", "where", "which", "while", "who", "will", "with", "would", "you",
];

/// Candidate terms considered per passage.
const TOP_TERMS: usize = 8;

/// Terms are drawn with probability proportional to their squared score, so
/// a passage's salient terms dominate its queries the way a passage's main
/// subject dominates what a reader would ask about it. The floor keeps
/// zero-score terms (present in every document) eligible.
const SALIENCE_FLOOR: f64 = 1e-3;

/// Queries for one passage. `shortfall` is set when fewer distinct queries
/// than requested could be produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticQueries {
    pub queries: Vec<String>,
    pub shortfall: bool,
}

/// Offline stand-in for an LLM: builds keyword queries from a passage's most
/// distinctive terms (term frequency × inverse corpus frequency).
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    doc_freq: HashMap<String, usize>,
    n_docs: usize,
}

pub fn is_content_term(w: &str) -> bool {
    w.chars().any(char::is_alphabetic) && !STOPWORDS.contains(&w)
}

impl SyntheticGenerator {
    /// Collects document frequencies from `texts`.
    pub fn new<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut doc_freq = HashMap::new();
        let mut n_docs = 0;
        for t in texts {
            n_docs += 1;
            let uniq: HashSet<String> = words(t).into_iter().collect();
            for w in uniq {
                *doc_freq.entry(w).or_insert(0) += 1;
            }
        }
        Self { doc_freq, n_docs }
    }

    /// Content terms of `text` with their tf × icf scores, best first.
    /// Ties keep first-occurrence order.
    pub fn scored_terms(&self, text: &str) -> Vec<(String, f64)> {
        let mut tf: Vec<(String, usize)> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for w in words(text).into_iter().filter(|w| is_content_term(w)) {
            match index.get(&w) {
                Some(&i) => tf[i].1 += 1,
                None => {
                    index.insert(w.clone(), tf.len());
                    tf.push((w, 1));
                }
            }
        }
        let icf = |w: &str| {
            let df = self.doc_freq.get(w).copied().unwrap_or(0);
            ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1e-6
        };
        let mut scored: Vec<(usize, f64, String)> =
            tf.into_iter().enumerate().map(|(i, (w, c))| (i, c as f64 * icf(&w), w)).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.into_iter().map(|(_, s, w)| (w, s)).collect()
    }

    /// Content terms of `text`, best first. Ties keep first-occurrence order.
    pub fn ranked_terms(&self, text: &str) -> Vec<String> {
        self.scored_terms(text).into_iter().map(|(w, _)| w).collect()
    }

    /// Up to `n` distinct queries for a passage, deterministic in
    /// `(passage_id, text, n, seed)`.
    pub fn generate(&self, passage_id: &str, text: &str, n: usize, seed: u64) -> Result<SyntheticQueries, ExpandError> {
        if n == 0 {
            return Err(ExpandError::Config("must request at least one query".into()));
        }
        let mut scored = self.scored_terms(text);
        if scored.is_empty() {
            let fallback = words(text).into_iter().take(5).collect::<Vec<_>>().join(" ");
            let queries = dedup_queries([fallback]);
            return Ok(SyntheticQueries {
                shortfall: queries.len() < n,
                queries,
            });
        }
        scored.truncate(TOP_TERMS);
        let (terms, weights): (Vec<String>, Vec<f64>) =
            scored.into_iter().map(|(w, s)| (w, SALIENCE_FLOOR + s * s)).unzip();
        let mut rng = ChaCha8Rng::from_seed(rng_seed(seed, passage_id, text));
        let pick = |rng: &mut ChaCha8Rng, k: usize| -> Vec<String> {
            let idx: Vec<usize> = (0..terms.len()).collect();
            idx.choose_multiple_weighted(rng, k, |&i| weights[i])
                .expect("positive weights")
                .map(|&i| terms[i].clone())
                .collect()
        };
        let mut raw = Vec::new();
        let mut distinct = HashSet::new();
        for _ in 0..20 * n {
            if distinct.len() == n {
                break;
            }
            let max_skeleton = terms.len().min(3);
            let q = match rng.gen_range(1..=max_skeleton) {
                1 => format!("what is {}", pick(&mut rng, 1)[0]),
                2 => {
                    let t = pick(&mut rng, 2);
                    format!("how does {} relate to {}", t[0], t[1])
                }
                _ => pick(&mut rng, 3).join(" "),
            };
            if distinct.insert(q.to_lowercase()) {
                raw.push(q);
            }
        }
        let queries = dedup_queries(raw);
        Ok(SyntheticQueries {
            shortfall: queries.len() < n,
            queries,
        })
    }
}

/// Synthetic expansion of a whole corpus. Returns records in corpus order
/// and the number of passages that fell short of `n` queries.
pub fn expand_synthetic(
    passages: &[Passage],
    n: usize,
    seed: u64,
    created_at: &str,
) -> Result<(Vec<ExpandedQueries>, usize), ExpandError> {
    let g = SyntheticGenerator::new(passages.iter().map(|p| p.text.as_str()));
    let params = serde_json::json!({ "n_queries": n, "seed": seed });
    let mut shortfalls = 0;
    let mut records = Vec::with_capacity(passages.len());
    for p in passages {
        let out = g.generate(&p.id, &p.text, n, seed)?;
        shortfalls += usize::from(out.shortfall);
        if out.queries.is_empty() {
            continue;
        }
        records.push(ExpandedQueries {
            passage_id: p.id.clone(),
            queries: out.queries,
            generator: "synthetic".into(),
            params: params.clone(),
            created_at: created_at.to_string(),
        });
    }
    Ok((records, shortfalls))
}

fn rng_seed(seed: u64, passage_id: &str, text: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((passage_id.len() as u64).to_le_bytes());
    h.update(passage_id.as_bytes());
    h.update(text.as_bytes());
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn corpus(n: usize) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lex: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        (0..n)
            .map(|_| {
                let len = rng.gen_range(3..30);
                (0..len)
                    .map(|_| {
                        if rng.gen_bool(0.3) {
                            STOPWORDS[rng.gen_range(0..STOPWORDS.len())].to_string()
                        } else {
                            lex[rng.gen_range(0..lex.len())].clone()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    #[test]
    fn deterministic_per_seed() {
        let texts = corpus(50);
        let g = SyntheticGenerator::new(texts.iter().map(String::as_str));
        let a = g.generate("p3", &texts[3], 3, 7).unwrap();
        assert_eq!(a, g.generate("p3", &texts[3], 3, 7).unwrap());
    }

    #[test]
    fn every_query_overlaps_its_passage() {
        let texts = corpus(1000);
        let g = SyntheticGenerator::new(texts.iter().map(String::as_str));
        for (i, t) in texts.iter().enumerate() {
            let content: HashSet<String> = words(t).into_iter().filter(|w| is_content_term(w)).collect();
            let out = g.generate(&format!("p{i}"), t, 3, 1).unwrap();
            assert!(!out.queries.is_empty());
            if content.is_empty() {
                let head: Vec<String> = words(t).into_iter().take(5).collect();
                assert_eq!(out.queries, vec![head.join(" ")]);
                continue;
            }
            for q in &out.queries {
                assert!(words(q).iter().any(|w| content.contains(w)), "{q:?} vs {t:?}");
            }
        }
    }

    #[test]
    fn count_contract() {
        let texts = corpus(200);
        let g = SyntheticGenerator::new(texts.iter().map(String::as_str));
        for (i, t) in texts.iter().enumerate() {
            let out = g.generate(&i.to_string(), t, 3, 5).unwrap();
            assert!(out.queries.len() <= 3);
            assert_eq!(out.shortfall, out.queries.len() < 3);
        }
        // A single content term supports exactly one query.
        let out = g.generate("x", "the w1 of the", 3, 0).unwrap();
        assert_eq!(out.queries, vec!["what is w1"]);
        assert!(out.shortfall);
    }

    #[test]
    fn fallback_without_content_terms() {
        let g = SyntheticGenerator::new(["the a of"]);
        let out = g.generate("x", "The of and to in it was", 3, 0).unwrap();
        assert_eq!(out.queries, vec!["the of and to in"]);
        assert!(out.shortfall);
    }

    #[test]
    fn distinctive_terms_rank_first() {
        let g = SyntheticGenerator::new(["common rare", "common", "common", "common"]);
        assert_eq!(g.ranked_terms("common rare"), vec!["rare", "common"]);
    }

    proptest! {
        #[test]
        fn arbitrary_text_is_pure(text in "\\PC{1,120}", seed in any::<u64>()) {
            let g = SyntheticGenerator::new([text.as_str()]);
            let a = g.generate("id", &text, 3, seed).unwrap();
            prop_assert_eq!(a.clone(), g.generate("id", &text, 3, seed).unwrap());
            prop_assert!(a.queries.len() <= 3);
        }
    }
}
