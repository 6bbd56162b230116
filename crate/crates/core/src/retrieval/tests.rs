use super::*;
use crate::data::{Corpus, Passage, Vocab};
use crate::model::{Model, ModelConfig, Tower};
use crate::train::{run_finetune, FinetuneConfig, FinetuneExample};

fn toy() -> (Corpus, Vocab) {
    let texts = [
        "red apples grow on orchard trees",
        "the ocean tide follows the moon",
        "engines burn fuel to turn wheels",
        "violins and cellos play in orchestras",
    ];
    let corpus = Corpus::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage {
                id: format!("d{i}"),
                text: t.to_string(),
            })
            .collect(),
    )
    .unwrap();
    let vocab = Vocab::build(texts, 1000, 1).unwrap();
    (corpus, vocab)
}

fn items(n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| (format!("x{i:03}"), format!("passage {} about {} things", i % 7, i % 3)))
        .collect()
}

fn opts(batch_size: usize, shards: usize) -> EncodeOptions {
    EncodeOptions {
        tower: Tower::Passage,
        max_len: 16,
        batch_size,
        shards,
    }
}

#[test]
fn one_passage_one_row() {
    let vocab = Vocab::build(["passage about things 1 2 3 4 5 6"], 100, 1).unwrap();
    let model = Model::<f32>::new(ModelConfig::tiny(vocab.len()), 1).unwrap();
    let m = encode_texts(&model, &vocab, &items(1), opts(4, 1)).unwrap();
    assert_eq!((m.len(), m.dim()), (1, model.d_model()));
}

#[test]
fn sharding_is_bit_identical_and_deterministic() {
    let vocab = Vocab::build(["passage about things 0 1 2 3 4 5 6"], 100, 1).unwrap();
    let model = Model::<f32>::new(ModelConfig::tiny(vocab.len()), 2).unwrap();
    let serial = encode_texts(&model, &vocab, &items(37), opts(5, 1)).unwrap();
    let sharded = encode_texts(&model, &vocab, &items(37), opts(5, 4)).unwrap();
    assert_eq!(serial.to_le_bytes(), sharded.to_le_bytes());
    assert_eq!(serial.ids(), sharded.ids());
    let again = encode_texts(&model, &vocab, &items(37), opts(5, 1)).unwrap();
    assert_eq!(serial.to_le_bytes(), again.to_le_bytes());
}

#[test]
fn duplicate_ids_are_rejected() {
    let vocab = Vocab::build(["a"], 100, 1).unwrap();
    let model = Model::<f32>::new(ModelConfig::tiny(vocab.len()), 2).unwrap();
    let dup = vec![("x".to_string(), "a".to_string()), ("x".to_string(), "a".to_string())];
    assert!(matches!(
        encode_texts(&model, &vocab, &dup, opts(4, 1)),
        Err(RetrievalError::Data(_))
    ));
}

#[test]
fn toy_corpus_reaches_perfect_mrr() {
    let (corpus, vocab) = toy();
    let passages: Vec<Vec<u32>> = corpus.passages().iter().map(|p| vocab.encode_body(&p.text)).collect();
    // Each query is its passage's own text.
    let examples: Vec<FinetuneExample> = passages
        .iter()
        .enumerate()
        .map(|(i, b)| FinetuneExample {
            query: b.clone(),
            positive: i,
            negatives: Vec::new(),
        })
        .collect();
    let cfg = FinetuneConfig {
        epochs: 60,
        batch_size: 4,
        lr: 3e-3,
        negatives: 0,
        passage_max_len: 16,
        query_max_len: 16,
        ..FinetuneConfig::desk()
    };
    let model = Model::<f32>::new(ModelConfig::tiny(vocab.len()), 4).unwrap();
    let (model, _) = run_finetune(&cfg, model, &passages, &examples).unwrap();
    let queries = Corpus::new(
        corpus
            .passages()
            .iter()
            .map(|p| Passage {
                id: format!("q-{}", p.id),
                text: p.text.clone(),
            })
            .collect(),
    )
    .unwrap();
    let mut qrels = Qrels::new();
    for p in corpus.passages() {
        qrels.entry(format!("q-{}", p.id)).or_default().insert(p.id.clone(), 1);
    }
    let metrics = [Metric::Mrr(10), Metric::Recall(1), Metric::Ndcg(10)];
    let eval_opts = EvalOptions {
        passage_max_len: 16,
        query_max_len: 16,
        ..EvalOptions::default()
    };
    let (report, search) = evaluate(&model, &vocab, &corpus, &queries, &qrels, &metrics, eval_opts, "toy").unwrap();
    assert_eq!(report.mean(Metric::Mrr(10)), Some(1.0));
    assert_eq!(report.query_count, 4);
    assert_eq!(search.clipped_to, Some(4));
    // Means agree with the per-query breakdown.
    for (m, mean) in &report.means {
        let vals: Vec<f64> = report.per_query.values().map(|v| v[&m.to_string()]).collect();
        assert!((mean - vals.iter().sum::<f64>() / vals.len() as f64).abs() < 1e-9);
    }
    let (again, _) = evaluate(&model, &vocab, &corpus, &queries, &qrels, &metrics, eval_opts, "toy").unwrap();
    assert_eq!(report.to_jsonl(), again.to_jsonl());
    let (empty, _) = evaluate(&model, &vocab, &corpus, &queries, &qrels, &[], eval_opts, "toy").unwrap();
    assert_eq!(empty.query_count, 4);
    assert!(empty.means.is_empty());
    assert!(report.table().contains("mrr@10"));
}
