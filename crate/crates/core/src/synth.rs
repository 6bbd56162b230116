//! Generated topic-model benchmark: a passage corpus drawn from latent
//! topics, held-out queries judged relevant to every passage of their topic,
//! and training triples for fine-tuning.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Passage};
use crate::expand::STOPWORDS;
use crate::retrieval::Qrels;
use crate::train::Triple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicCorpusConfig {
    pub n_passages: usize,
    pub n_topics: usize,
    pub n_eval_queries: usize,
    pub n_train_queries: usize,
    pub words_per_topic: usize,
    pub background_words: usize,
    pub passage_len: (usize, usize),
    pub query_len: (usize, usize),
    /// Token mixture of a passage: dominant topic, secondary topic and
    /// function words; the remainder is background vocabulary.
    pub p_topic: f64,
    pub p_secondary: f64,
    pub p_function: f64,
    /// Probability that a query word comes from the query's topic.
    pub query_topic_prob: f64,
    /// Zipf exponents of word frequencies within a topic and within the
    /// background vocabulary (0 = uniform).
    pub topic_zipf: f64,
    pub background_zipf: f64,
    pub seed: u64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            n_passages: 2000,
            n_topics: 50,
            n_eval_queries: 200,
            n_train_queries: 400,
            words_per_topic: 24,
            background_words: 400,
            passage_len: (20, 40),
            query_len: (3, 5),
            p_topic: 0.35,
            p_secondary: 0.1,
            p_function: 0.25,
            query_topic_prob: 0.75,
            topic_zipf: 1.0,
            background_zipf: 1.0,
            seed: 42,
        }
    }
}

/// A generated benchmark. `topics[i]` is the dominant topic of passage `i`.
#[derive(Debug, Clone)]
pub struct TopicBenchmark {
    pub corpus: Corpus,
    pub topics: Vec<usize>,
    /// Words of each topic, most frequent first.
    pub topic_words: Vec<Vec<String>>,
    pub eval_queries: Corpus,
    pub qrels: Qrels,
    pub train_triples: Vec<Triple>,
}

/// Pronounceable made-up words, unique, in a fixed pseudo-random order.
fn lexicon(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "kr", "pl"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    let reserved: HashSet<&str> = STOPWORDS.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).expect("non-empty"));
            w.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        if rng.gen_bool(0.4) {
            w.push_str(["n", "l", "r", "s", "x"].choose(rng).expect("non-empty"));
        }
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn zipf(n: usize, exponent: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| (r as f64).powf(-exponent))).expect("positive weights")
}

impl TopicCorpusConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_topics < 2 || self.n_passages < self.n_topics {
            return Err("need at least two topics and one passage per topic".into());
        }
        if self.words_per_topic == 0 || self.background_words == 0 {
            return Err("lexicons must be non-empty".into());
        }
        let (a, b) = self.passage_len;
        let (c, d) = self.query_len;
        if a == 0 || a > b || c == 0 || c > d {
            return Err("length ranges must be non-empty and positive".into());
        }
        let mix = self.p_topic + self.p_secondary + self.p_function;
        if !(self.topic_zipf >= 0.0 && self.background_zipf >= 0.0) {
            return Err("Zipf exponents must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&mix) || !(0.0..=1.0).contains(&self.query_topic_prob) {
            return Err("mixture probabilities must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<TopicBenchmark, String> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let words = lexicon(self.n_topics * self.words_per_topic + self.background_words, &mut rng);
        let (topic_words, background) = words.split_at(self.n_topics * self.words_per_topic);
        let topic_lex: Vec<&[String]> = topic_words.chunks(self.words_per_topic).collect();
        let topic_dist = zipf(self.words_per_topic, self.topic_zipf);
        let bg_dist = zipf(background.len(), self.background_zipf);

        let mut passages = Vec::with_capacity(self.n_passages);
        let mut topics = Vec::with_capacity(self.n_passages);
        let mut order: Vec<usize> = (0..self.n_passages).map(|i| i % self.n_topics).collect();
        order.shuffle(&mut rng);
        for (i, &t) in order.iter().enumerate() {
            let second = (t + rng.gen_range(1..self.n_topics)) % self.n_topics;
            let len = rng.gen_range(self.passage_len.0..=self.passage_len.1);
            let text: Vec<&str> = (0..len)
                .map(|_| {
                    let u: f64 = rng.gen();
                    if u < self.p_topic {
                        topic_lex[t][topic_dist.sample(&mut rng)].as_str()
                    } else if u < self.p_topic + self.p_secondary {
                        topic_lex[second][topic_dist.sample(&mut rng)].as_str()
                    } else if u < self.p_topic + self.p_secondary + self.p_function {
                        STOPWORDS[rng.gen_range(0..STOPWORDS.len())]
                    } else {
                        background[bg_dist.sample(&mut rng)].as_str()
                    }
                })
                .collect();
            passages.push(Passage {
                id: format!("D{i:05}"),
                text: text.join(" "),
            });
            topics.push(t);
        }
        let by_topic: Vec<Vec<usize>> = (0..self.n_topics)
            .map(|t| (0..self.n_passages).filter(|&i| topics[i] == t).collect())
            .collect();

        let query = |rng: &mut ChaCha8Rng, t: usize| -> String {
            let len = rng.gen_range(self.query_len.0..=self.query_len.1);
            let mut used = HashSet::new();
            let mut q = Vec::with_capacity(len);
            while q.len() < len {
                let w = if rng.gen_bool(self.query_topic_prob) {
                    &topic_lex[t][topic_dist.sample(rng)]
                } else {
                    &background[bg_dist.sample(rng)]
                };
                if used.insert(w.as_str()) {
                    q.push(w.as_str());
                }
            }
            q.join(" ")
        };

        let mut eval = Vec::with_capacity(self.n_eval_queries);
        let mut qrels = Qrels::new();
        for i in 0..self.n_eval_queries {
            let t = i % self.n_topics;
            let id = format!("Q{i:04}");
            eval.push(Passage {
                id: id.clone(),
                text: query(&mut rng, t),
            });
            qrels.insert(id, by_topic[t].iter().map(|&p| (passages[p].id.clone(), 1)).collect());
        }

        let mut train_triples = Vec::with_capacity(self.n_train_queries);
        for _ in 0..self.n_train_queries {
            let t = rng.gen_range(0..self.n_topics);
            let pos = *by_topic[t].choose(&mut rng).expect("every topic has passages");
            let neg_topic = (t + rng.gen_range(1..self.n_topics)) % self.n_topics;
            let neg = *by_topic[neg_topic].choose(&mut rng).expect("every topic has passages");
            train_triples.push(Triple {
                query: query(&mut rng, t),
                positive_id: passages[pos].id.clone(),
                negative_ids: vec![passages[neg].id.clone()],
            });
        }

        Ok(TopicBenchmark {
            corpus: Corpus::new(passages).map_err(|e| e.to_string())?,
            topics,
            topic_words: topic_lex.iter().map(|l| l.to_vec()).collect(),
            eval_queries: Corpus::new(eval).map_err(|e| e.to_string())?,
            qrels,
            train_triples,
        })
    }
}
