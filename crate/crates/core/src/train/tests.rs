use super::*;
use crate::data::{ContextBatch, MaskedBatch, MaskedRow, TokenBatch, CLS, IGNORE_INDEX, SEP};
use crate::model::{ModelConfig, Tower};
use numcore::gradcheck::{check_inputs, check_params};
use numcore::{NdArray, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn masked_batch(labels_at: &[(usize, i64)], rows: usize, cols: usize) -> MaskedBatch {
    let mut out = Vec::new();
    for r in 0..rows {
        let mut input_ids = vec![7u32; cols];
        input_ids[0] = CLS;
        input_ids[cols - 1] = SEP;
        let mut labels = vec![IGNORE_INDEX; cols];
        let mut mask_positions = Vec::new();
        for &(pos, label) in labels_at {
            if pos / cols == r {
                labels[pos % cols] = label;
                input_ids[pos % cols] = crate::data::MASK;
                mask_positions.push(pos % cols);
            }
        }
        out.push(MaskedRow {
            nothing_to_mask: mask_positions.is_empty(),
            input_ids,
            labels,
            mask_positions,
        });
    }
    MaskedBatch::from_rows(out)
}

/// Direct log-sum-exp evaluation of mean cross-entropy.
fn lse_ce(logits: &[f64], v: usize, targets: &[i64]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (r, &t) in targets.iter().enumerate() {
        if t == IGNORE_INDEX {
            continue;
        }
        let row = &logits[r * v..(r + 1) * v];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        sum += lse - row[t as usize];
        n += 1;
    }
    sum / n as f64
}

#[test]
fn mlm_loss_uniform_is_ln_vocab() {
    let tape = Tape::<f64>::new();
    let batch = masked_batch(&[(1, 3), (2, 5)], 1, 4);
    let logits = tape.leaf(NdArray::zeros(vec![4, 8]));
    let l = loss_mlm(&logits, &batch).unwrap();
    assert!(!l.empty);
    assert!(close(l.loss.item(), 8f64.ln(), 1e-12));
}

#[test]
fn mlm_loss_ignores_unmasked_positions_and_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = masked_batch(&[(1, 3), (6, 2)], 2, 5);
    let vals: Vec<f64> = (0..10 * 6).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let tape = Tape::<f64>::new();
    let base = loss_mlm(&tape.leaf(NdArray::new(vec![10, 6], vals.clone()).unwrap()), &batch)
        .unwrap()
        .loss
        .item();
    assert!(close(base, lse_ce(&vals, 6, &batch.labels), 1e-12));
    let mut perturbed = vals.clone();
    for r in [0, 2, 3, 4, 5, 7, 8, 9] {
        for c in 0..6 {
            perturbed[r * 6 + c] += rng.gen_range(-10.0..10.0);
        }
    }
    let moved = loss_mlm(&tape.leaf(NdArray::new(vec![10, 6], perturbed).unwrap()), &batch)
        .unwrap()
        .loss
        .item();
    assert_eq!(base, moved);
    let ext = loss_ext(&tape.leaf(NdArray::new(vec![10, 6], vals).unwrap()), &batch).unwrap();
    assert_eq!(ext.loss.item(), base);
}

#[test]
fn masked_losses_are_zero_without_mask() {
    let tape = Tape::<f64>::new();
    let batch = masked_batch(&[], 2, 4);
    let logits = tape.leaf(NdArray::full(vec![8, 5], 1.0).with_requires_grad(true));
    let l = loss_ext(&logits, &batch).unwrap();
    assert!(l.empty);
    assert_eq!(l.loss.item(), 0.0);
    l.loss.backward().unwrap();
    assert!(logits.grad().map_or(true, |g| g.data().iter().all(|&x| x == 0.0)));
    assert!(loss_mlm(&tape.leaf(NdArray::zeros(vec![7, 5])), &batch).is_err());
}

#[test]
fn clm_loss_single_token_and_cross_oracle() {
    let tape = Tape::<f64>::new();
    // N = 1: two predictions, x_1 from h_cls alone and [SEP] after it.
    let ctx = ContextBatch::new(&[vec![6]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vals: Vec<f64> = (0..2 * 9).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let logits = tape.leaf(NdArray::new(vec![2, 9], vals.clone()).unwrap());
    let l = loss_bottleneck_clm(&logits, &ctx).unwrap().loss.item();
    assert!(close(l, lse_ce(&vals, 9, &[6, i64::from(SEP)]), 1e-12));
    // Equals the masked machinery fed the shifted targets.
    let as_mlm = loss_masked(&logits, &ctx.targets).unwrap().loss.item();
    assert_eq!(l, as_mlm);
    let empty = ContextBatch {
        inputs: vec![],
        targets: vec![],
        lens: vec![],
        batch: 0,
        len: 0,
    };
    assert!(matches!(loss_bottleneck_clm(&logits, &empty), Err(TrainError::Contract(_))));
}

#[test]
fn infonce_hand_values() {
    let tape = Tape::<f64>::new();
    let p = tape.leaf(NdArray::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let c = tape.leaf(NdArray::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    assert!(close(loss_infonce(&p, &c, false).unwrap().item(), expected, 1e-6));
    assert!(close(expected, 0.3133, 1e-4));
    assert!(close(loss_infonce(&p, &c, true).unwrap().item(), expected, 1e-12));
    let same = tape.leaf(NdArray::full(vec![4, 3], 0.5));
    assert!(close(loss_infonce(&same, &same, false).unwrap().item(), 4f64.ln(), 1e-12));
    let one = tape.leaf(NdArray::zeros(vec![1, 3]));
    assert!(matches!(loss_infonce(&one, &one, false), Err(TrainError::Contract(_))));
}

#[test]
fn infonce_shift_and_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let b = rng.gen_range(2..7);
        let d = 4;
        let p: Vec<Vec<f64>> = (0..b).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let c: Vec<Vec<f64>> = (0..b).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let tape = Tape::<f64>::new();
        let base = loss_infonce(
            &tape.leaf(NdArray::from_rows(&p).unwrap()),
            &tape.leaf(NdArray::from_rows(&c).unwrap()),
            false,
        )
        .unwrap()
        .item();
        assert!(base >= 0.0);
        // A shared extra coordinate (1 on the passage side, k on the context
        // side) adds the constant k to every score.
        let k = rng.gen_range(-5.0..5.0);
        let p2: Vec<Vec<f64>> = p.iter().map(|r| [r.clone(), vec![1.0]].concat()).collect();
        let c2: Vec<Vec<f64>> = c.iter().map(|r| [r.clone(), vec![k]].concat()).collect();
        let shifted = loss_infonce(
            &tape.leaf(NdArray::from_rows(&p2).unwrap()),
            &tape.leaf(NdArray::from_rows(&c2).unwrap()),
            false,
        )
        .unwrap()
        .item();
        assert!(close(base, shifted, 1e-9));
        let mut perm: Vec<usize> = (0..b).collect();
        perm.reverse();
        let pp: Vec<Vec<f64>> = perm.iter().map(|&i| p[i].clone()).collect();
        let cp: Vec<Vec<f64>> = perm.iter().map(|&i| c[i].clone()).collect();
        let permuted = loss_infonce(
            &tape.leaf(NdArray::from_rows(&pp).unwrap()),
            &tape.leaf(NdArray::from_rows(&cp).unwrap()),
            false,
        )
        .unwrap()
        .item();
        assert!(close(base, permuted, 1e-6));
    }
}

#[test]
fn finetune_loss_hand_value() {
    let tape = Tape::<f64>::new();
    let q = tape.leaf(NdArray::from_rows(&[vec![1.0, 0.0]]).unwrap());
    let pos = tape.leaf(NdArray::from_rows(&[vec![1.0, 0.0]]).unwrap());
    let neg = tape.leaf(NdArray::from_rows(&[vec![0.0, 1.0]]).unwrap());
    let l = loss_finetune(&q, &pos, Some(&neg)).unwrap().item();
    assert!(close(l, -(1f64.exp() / (1f64.exp() + 1.0)).ln(), 1e-6));
    // Softplus form: log(1 + exp(s_neg - s_pos)).
    assert!(close(l, (1.0 + (-1f64).exp()).ln(), 1e-12));
}

#[test]
fn total_loss_is_the_plain_sum() {
    let tape = Tape::<f64>::new();
    let s = |v: f64| tape.leaf(NdArray::scalar(v));
    let b = total_loss(
        Paradigm::Bottleneck,
        &LossComponents {
            enc: Some(s(0.5)),
            dec: Some(s(0.7)),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(b.item(), 0.5 + 0.7);
    assert!(close(b.item(), 1.2, 1e-12));
    let c = total_loss(
        Paradigm::Contrastive,
        &LossComponents {
            enc: Some(s(0.5)),
            ext: Some(s(0.7)),
            cl: Some(s(0.3)),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(c.item(), 0.5 + 0.7 + 0.3);
    assert!(close(c.item(), 1.5, 1e-12));
    let missing = total_loss(
        Paradigm::Contrastive,
        &LossComponents {
            enc: Some(s(0.5)),
            ext: Some(s(0.7)),
            ..Default::default()
        },
    );
    assert!(matches!(missing, Err(TrainError::Contract(_))));
}

#[test]
fn infonce_and_finetune_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = NdArray::randn(vec![3, 4], 1.0, &mut rng);
        let c = NdArray::randn(vec![3, 4], 1.0, &mut rng);
        let n = NdArray::randn(vec![5, 4], 1.0, &mut rng);
        for sym in [false, true] {
            let r = check_inputs(
                &[p.clone(), c.clone()],
                |_, v| loss_infonce(&v[0], &v[1], sym).map_err(|e| numcore::NumError::Contract(e.to_string())),
                1e-4,
                None,
            )
            .unwrap();
            assert!(r.iter().all(|g| g.rel_err < 1e-3), "{r:?}");
        }
        let r = check_inputs(
            &[p.clone(), c.clone(), n.clone()],
            |_, v| loss_finetune(&v[0], &v[1], Some(&v[2])).map_err(|e| numcore::NumError::Contract(e.to_string())),
            1e-4,
            None,
        )
        .unwrap();
        assert!(r.iter().all(|g| g.rel_err < 1e-3), "{r:?}");
    }
}

fn tiny_model_config(vocab: usize) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(vocab);
    cfg.init_std = 0.3;
    cfg
}

#[test]
fn total_gradient_is_sum_of_component_gradients() {
    let model: crate::model::Model<f64> = crate::model::Model::new(tiny_model_config(20), 4).unwrap();
    let batch = masked_batch(&[(2, 9), (7, 11)], 2, 5);
    let ctx = ContextBatch::new(&[vec![8, 9], vec![10, 12, 13]]).unwrap();
    let grads = |which: u8| {
        let tape = Tape::new();
        let out = model.encode(&tape, &batch.tokens, Tower::Passage).unwrap();
        let enc = loss_mlm(&model.mlm_logits(&tape, &out.hidden, Tower::Passage).unwrap(), &batch)
            .unwrap()
            .loss;
        let dec = loss_bottleneck_clm(&model.bottleneck_decode(&tape, &out.cls, &ctx).unwrap(), &ctx)
            .unwrap()
            .loss;
        let loss = match which {
            0 => enc,
            1 => dec,
            _ => total_loss(
                Paradigm::Bottleneck,
                &LossComponents {
                    enc: Some(enc),
                    dec: Some(dec),
                    ..Default::default()
                },
            )
            .unwrap(),
        };
        loss.backward().unwrap();
        let mut store = model.store.clone();
        store.zero_grads();
        store.accumulate_from(&tape).unwrap();
        store
            .ids()
            .flat_map(|id| store.get(id).grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; store.get(id).numel()]))
            .collect::<Vec<f64>>()
    };
    let (a, b, t) = (grads(0), grads(1), grads(2));
    for i in 0..t.len() {
        assert!(close(t[i], a[i] + b[i], 1e-12 * (1.0 + t[i].abs())));
    }
}

#[test]
fn ext_loss_reaches_encoder_through_both_paths() {
    let model: crate::model::Model<f64> = crate::model::Model::new(tiny_model_config(20), 5).unwrap();
    let batch = masked_batch(&[(1, 9), (2, 12), (6, 11)], 2, 5);
    let tape = Tape::new();
    let out = model.encode(&tape, &batch.tokens, Tower::Passage).unwrap();
    // Re-root both inputs of the auxiliary head at leaves to see each path.
    let cls_value = out.cls.value().clone();
    let cls = tape.leaf(cls_value.with_requires_grad(true));
    let tapped_value = out.layer_states[0].value().clone();
    let states = tape.leaf(tapped_value.with_requires_grad(true));
    let tapped = crate::model::TappedStates { layer: 1, states };
    let h = model
        .aux_hidden(&tape, &cls, &tapped, &out.key_mask, out.batch, out.seq_len)
        .unwrap();
    let l = loss_ext(&model.aux_project(&tape, &h).unwrap(), &batch).unwrap();
    l.loss.backward().unwrap();
    let norm = |g: NdArray<f64>| g.data().iter().map(|x| x * x).sum::<f64>();
    assert!(norm(cls.grad().unwrap()) > 0.0);
    assert!(norm(states.grad().unwrap()) > 0.0);
}

#[test]
fn every_pretraining_loss_matches_finite_differences() {
    let mut cfg = tiny_model_config(14);
    cfg.encoder.d_model = 8;
    cfg.encoder.d_ff = 8;
    cfg.encoder.max_seq_len = 8;
    let model: crate::model::Model<f64> = crate::model::Model::new(cfg, 6).unwrap();
    let p = masked_batch(&[(1, 9), (7, 11)], 2, 5);
    let c = masked_batch(&[(2, 5), (6, 13)], 2, 4);
    let ctx = ContextBatch::new(&[vec![6, 7], vec![8, 11, 5]]).unwrap();
    for (name, which) in [("mlm", 0u8), ("clm", 1), ("ext", 2), ("infonce", 3)] {
        let mut store = model.store.clone();
        let reports = check_params(
            &mut store,
            |tape, store| {
                let mut m = model.clone();
                m.store = store.clone();
                let run = || -> Result<_, TrainError> {
                    let po = m.encode(tape, &p.tokens, Tower::Passage)?;
                    Ok(match which {
                        0 => loss_mlm(&m.mlm_logits(tape, &po.hidden, Tower::Passage)?, &p)?.loss,
                        1 => loss_bottleneck_clm(&m.bottleneck_decode(tape, &po.cls, &ctx)?, &ctx)?.loss,
                        2 => {
                            let t = po.tapped(1)?;
                            loss_ext(&m.aux_head_logits(tape, &po, &t)?, &p)?.loss
                        }
                        _ => {
                            let co = m.encode(tape, &c.tokens, Tower::Query)?;
                            loss_infonce(&po.cls, &co.cls, false)?
                        }
                    })
                };
                run().map_err(|e| numcore::NumError::Contract(e.to_string()))
            },
            1e-5,
            Some(4),
        )
        .unwrap();
        for r in &reports {
            assert!(r.rel_err < 1e-3, "{name} {}: {}", r.name, r.rel_err);
        }
    }
}

fn toy_corpus(n: usize, len: usize, vocab: u32, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.gen_range(5..vocab)).collect())
        .collect()
}

fn toy_config(paradigm: Paradigm, steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(paradigm);
    cfg.total_steps = steps;
    cfg.batch_size = 4;
    cfg.grad_accum = 1;
    cfg.peak_lr = 3e-3;
    cfg.span_min = 4;
    cfg.span_max = 8;
    cfg.passage_max_len = 14;
    cfg.query_max_len = 8;
    cfg.model = ModelConfig::tiny(0);
    cfg.model.encoder.max_seq_len = 16;
    cfg
}

fn run(cfg: &TrainConfig, docs: &[Vec<u32>], exp: Option<&[Vec<Vec<u32>>]>) -> (PretrainOutcome, Vec<String>) {
    let mut mc = cfg.model.clone();
    mc.encoder.vocab_size = 40;
    let model = crate::model::Model::new(mc, cfg.seed).unwrap();
    let mut labels = Vec::new();
    let out = run_pretraining(
        cfg,
        model,
        PretrainData {
            passages: docs,
            expansions: exp,
        },
        &mut |ev| {
            labels.push(format!("{}@{}", ev.label, ev.step));
            Ok(())
        },
    )
    .unwrap();
    (out, labels)
}

#[test]
fn curriculum_boundary_and_constant_stage_two() {
    let docs = toy_corpus(12, 12, 40, 7);
    let exps: Vec<Vec<Vec<u32>>> = docs.iter().map(|d| vec![d[..3].to_vec(), d[4..6].to_vec()]).collect();
    for paradigm in [Paradigm::Contrastive, Paradigm::Bottleneck] {
        let cfg = toy_config(paradigm, 20);
        let (out, labels) = run(&cfg, &docs, Some(&exps));
        let r = &out.report;
        assert_eq!(r.stage_boundary, Some(15));
        assert_eq!(labels, vec!["stage1@15", "final@20"]);
        assert!(r.steps[..15].iter().all(|s| s.stage == 1));
        assert!(r.steps[15..].iter().all(|s| s.stage == 2));
        let lr15 = r.steps[14].lr;
        assert!(r.steps[15..].iter().all(|s| s.lr == lr15));
        assert_eq!(r.stage1_final_digest, r.stage2_start_digest);
        assert!(r.stage1_final_digest.is_some());
        for s in &r.steps {
            assert!(s.total.is_finite());
            match paradigm {
                Paradigm::Bottleneck => assert_eq!(s.total as f32, (s.enc + s.dec.unwrap()) as f32),
                Paradigm::Contrastive => assert!(s.ext.is_some() && s.cl.is_some() && s.dec.is_none()),
            }
        }
    }
}

#[test]
fn full_stage_one_ignores_expansions() {
    let docs = toy_corpus(8, 10, 40, 8);
    let mut cfg = toy_config(Paradigm::Contrastive, 6);
    cfg.plan = StagePlan::Curriculum {
        stage1_fraction: 1.0,
        stage2_lr: None,
    };
    let (a, labels) = run(&cfg, &docs, None);
    assert_eq!(labels, vec!["final@6"]);
    assert_eq!(a.report.stage_boundary, None);
    let junk: Vec<Vec<Vec<u32>>> = docs.iter().map(|_| vec![vec![9, 9]]).collect();
    let (b, _) = run(&cfg, &docs, Some(&junk));
    assert_eq!(a.report.final_digest, b.report.final_digest);
}

#[test]
fn sparse_expansions_are_a_configuration_error() {
    let docs = toy_corpus(8, 10, 40, 9);
    let mut exps: Vec<Vec<Vec<u32>>> = vec![Vec::new(); 8];
    exps[0] = vec![vec![5, 6]];
    exps[1] = vec![vec![7]];
    let cfg = toy_config(Paradigm::Contrastive, 8);
    let mut mc = cfg.model.clone();
    mc.encoder.vocab_size = 40;
    let err = run_pretraining(
        &cfg,
        crate::model::Model::new(mc, 0).unwrap(),
        PretrainData {
            passages: &docs,
            expansions: Some(&exps),
        },
        &mut |_| Ok(()),
    )
    .err()
    .unwrap();
    assert!(matches!(err, TrainError::Config(_)), "{err}");
}

#[test]
fn pretraining_is_seed_deterministic() {
    let docs = toy_corpus(10, 12, 40, 10);
    let exps: Vec<Vec<Vec<u32>>> = docs.iter().map(|d| vec![d[2..5].to_vec()]).collect();
    let cfg = toy_config(Paradigm::Contrastive, 8);
    let (a, _) = run(&cfg, &docs, Some(&exps));
    let (b, _) = run(&cfg, &docs, Some(&exps));
    let json = |r: &TrainReport| serde_json::to_string(r).unwrap();
    assert_eq!(json(&a.report), json(&b.report));
    let mut other = cfg.clone();
    other.seed += 1;
    let (c, _) = run(&other, &docs, Some(&exps));
    assert_ne!(a.report.final_digest, c.report.final_digest);
}

#[test]
fn pretraining_reduces_loss() {
    let docs = toy_corpus(64, 12, 40, 11);
    for paradigm in [Paradigm::Contrastive, Paradigm::Bottleneck] {
        let mut cfg = toy_config(paradigm, 200);
        cfg.plan = StagePlan::Single {
            context: ContextSource::Coarse,
        };
        cfg.batch_size = 8;
        let (out, _) = run(&cfg, &docs, None);
        let early = out.report.mean_total(1, 10);
        let late = out.report.mean_total(191, 200);
        assert!(late < early, "{paradigm}: {early} -> {late}");
    }
}

#[test]
fn finetune_triples_parse_and_resolve() {
    use crate::data::{Corpus, Passage, Vocab};
    let text = "{\"query\": \"what is b\", \"positive_id\": \"p2\", \"negative_ids\": [\"p1\"]}\n\n{\"query\": \"a\", \"positive_id\": \"p1\"}\n";
    let triples = parse_triples(text.as_bytes(), "t.jsonl").unwrap();
    assert_eq!(triples.len(), 2);
    assert!(triples[1].negative_ids.is_empty());
    let corpus = Corpus::new(vec![
        Passage {
            id: "p1".into(),
            text: "a a".into(),
        },
        Passage {
            id: "p2".into(),
            text: "b".into(),
        },
    ])
    .unwrap();
    let vocab = Vocab::build(corpus.texts(), 100, 1).unwrap();
    let ex = resolve_triples(&triples, &corpus, &vocab).unwrap();
    assert_eq!(ex[0].positive, 1);
    assert_eq!(ex[0].negatives, vec![0]);
    let bad = parse_triples("{\"query\": \"x\", \"positive_id\": \"\"}".as_bytes(), "t").unwrap_err();
    assert!(bad.to_string().contains("t:1"));
    let orphan = vec![Triple {
        query: "x".into(),
        positive_id: "nope".into(),
        negative_ids: vec![],
    }];
    assert!(resolve_triples(&orphan, &corpus, &vocab).is_err());
    assert!(parse_triples("not json".as_bytes(), "t").is_err());
}

#[test]
fn finetuning_lowers_the_loss_and_is_reproducible() {
    let docs = toy_corpus(32, 10, 40, 12);
    let examples: Vec<FinetuneExample> = (0..32)
        .map(|i| FinetuneExample {
            query: docs[i][..4].to_vec(),
            positive: i,
            negatives: vec![(i + 1) % 32],
        })
        .collect();
    let cfg = FinetuneConfig {
        epochs: 8,
        batch_size: 8,
        lr: 3e-3,
        negatives: 2,
        passage_max_len: 12,
        query_max_len: 8,
        ..FinetuneConfig::desk()
    };
    let mut mc = ModelConfig::tiny(40);
    mc.encoder.max_seq_len = 16;
    let fresh = || crate::model::Model::new(mc.clone(), 3).unwrap();
    let (_, a) = run_finetune(&cfg, fresh(), &docs, &examples).unwrap();
    let first = a.epoch_losses[0];
    let last = *a.epoch_losses.last().unwrap();
    assert!(last < first, "{:?}", a.epoch_losses);
    let (_, b) = run_finetune(&cfg, fresh(), &docs, &examples).unwrap();
    assert_eq!(a, b);
}

#[test]
fn finetune_with_single_example_uses_explicit_negative() {
    let docs = vec![vec![5, 6, 7], vec![8, 9]];
    let examples = vec![FinetuneExample {
        query: vec![5],
        positive: 0,
        negatives: vec![1],
    }];
    let cfg = FinetuneConfig {
        epochs: 1,
        batch_size: 4,
        negatives: 1,
        ..FinetuneConfig::desk()
    };
    let (_, r) = run_finetune(&cfg, crate::model::Model::new(ModelConfig::tiny(12), 0).unwrap(), &docs, &examples).unwrap();
    assert_eq!(r.steps.len(), 1);
    // Two candidates: the loss is log(1 + exp(s_neg - s_pos)) > 0.
    assert!(r.steps[0].2 > 0.0);
    let _ = TokenBatch::from_sequences(&[vec![CLS, SEP]]);
}
