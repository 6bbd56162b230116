//! Controlled comparisons on the generated topic benchmark: span-only
//! baseline vs expansion-query pre-training vs the two-stage curriculum,
//! and fine-tuning from each initialization.

use serde::{Deserialize, Serialize};

use crate::data::{TokenizedCorpus, Vocab};
use crate::expand::{expand_synthetic, ExpandError, LoadedExpansions};
use crate::model::{Model, ModelConfig};
use crate::retrieval::{evaluate, EvalOptions, Metric, MetricReport, RetrievalError};
use crate::synth::{TopicBenchmark, TopicCorpusConfig};
use crate::train::{
    resolve_triples, run_finetune, run_pretraining, ContextSource, FinetuneConfig, Paradigm, PretrainData, StagePlan,
    TrainConfig, TrainError, TrainReport,
};

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("benchmark generation failed: {0}")]
    Generate(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Expand(#[from] ExpandError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Context schedule of one pre-training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Random spans only.
    Baseline,
    /// Expansion queries throughout.
    Expanded,
    /// Spans for the first 75% of steps, expansion queries for the rest.
    Curriculum,
}

impl Arm {
    pub fn plan(self) -> StagePlan {
        match self {
            Arm::Baseline => StagePlan::Single {
                context: ContextSource::Coarse,
            },
            Arm::Expanded => StagePlan::Single {
                context: ContextSource::Expansions,
            },
            Arm::Curriculum => StagePlan::Curriculum {
                stage1_fraction: 0.75,
                stage2_lr: None,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Expanded => "expanded",
            Arm::Curriculum => "curriculum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub corpus: TopicCorpusConfig,
    /// Synthetic expansion queries per passage.
    pub queries_per_passage: usize,
    pub expansion_seed: u64,
    /// Contrastive pre-training settings; the plan and seed are set per run.
    pub contrastive: TrainConfig,
    /// Bottleneck pre-training settings; the plan and seed are set per run.
    pub bottleneck: TrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalOptions,
}

impl StudyConfig {
    /// Small encoder sized so a 2,000-step run takes about a minute on one
    /// CPU core.
    pub fn standard() -> Self {
        let mut model = ModelConfig::tiny(0);
        model.encoder.d_model = 32;
        model.encoder.d_ff = 64;
        model.encoder.n_heads = 2;
        model.encoder.max_seq_len = 48;
        model.init_std = 0.02;
        let contrastive = TrainConfig {
            total_steps: 2000,
            batch_size: 16,
            grad_accum: 1,
            peak_lr: 2e-3,
            span_min: 8,
            span_max: 24,
            passage_max_len: 48,
            query_max_len: 16,
            model: model.clone(),
            ..TrainConfig::desk(Paradigm::Contrastive)
        };
        let bottleneck = TrainConfig {
            paradigm: Paradigm::Bottleneck,
            ..contrastive.clone()
        };
        Self {
            corpus: TopicCorpusConfig::default(),
            queries_per_passage: 8,
            expansion_seed: 1,
            contrastive,
            bottleneck,
            finetune: FinetuneConfig {
                epochs: 1,
                batch_size: 16,
                lr: 5e-4,
                negatives: 1,
                passage_max_len: 48,
                query_max_len: 16,
                ..FinetuneConfig::desk()
            },
            eval: EvalOptions {
                depth: 100,
                batch_size: 64,
                shards: 1,
                passage_max_len: 48,
                query_max_len: 16,
            },
        }
    }
}

/// Generated corpus, vocabulary and tokenized expansions shared by all runs.
pub struct StudyData {
    pub config: StudyConfig,
    pub bench: TopicBenchmark,
    pub vocab: Vocab,
    pub tokenized: TokenizedCorpus,
    pub expansions: LoadedExpansions,
    pub aligned: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub arm: Arm,
    pub paradigm: Paradigm,
    pub seed: u64,
    pub report: MetricReport,
    pub train: TrainReport,
    pub model: Model<f32>,
}

impl RunResult {
    pub fn mrr(&self) -> f64 {
        self.report.mean(Metric::Mrr(10)).unwrap_or(0.0)
    }
}

pub const METRICS: [Metric; 3] = [Metric::Mrr(10), Metric::Ndcg(10), Metric::Recall(50)];

impl StudyData {
    pub fn prepare(config: StudyConfig) -> Result<Self, StudyError> {
        let bench = config.corpus.generate().map_err(StudyError::Generate)?;
        let vocab = Vocab::build(bench.corpus.texts(), 50_000, 1)?;
        let tokenized = TokenizedCorpus::new(&bench.corpus, &vocab);
        let (records, _) = expand_synthetic(
            bench.corpus.passages(),
            config.queries_per_passage,
            config.expansion_seed,
            "",
        )?;
        let expansions = LoadedExpansions {
            records,
            orphans: Vec::new(),
        };
        let aligned = expansions.aligned(&bench.corpus, &vocab);
        Ok(Self {
            config,
            bench,
            vocab,
            tokenized,
            expansions,
            aligned,
        })
    }

    pub fn train_config(&self, paradigm: Paradigm, arm: Arm, seed: u64) -> TrainConfig {
        let mut cfg = match paradigm {
            Paradigm::Contrastive => self.config.contrastive.clone(),
            Paradigm::Bottleneck => self.config.bottleneck.clone(),
        };
        cfg.plan = arm.plan();
        cfg.seed = seed;
        cfg.model.encoder.vocab_size = self.vocab.len();
        cfg
    }

    pub fn fresh_model(&self, seed: u64) -> Result<Model<f32>, StudyError> {
        let mut mc = self.config.contrastive.model.clone();
        mc.encoder.vocab_size = self.vocab.len();
        Ok(Model::new(mc, seed)?)
    }

    /// Zero-shot retrieval quality on the held-out queries.
    pub fn evaluate(&self, model: &Model<f32>, label: &str) -> Result<MetricReport, StudyError> {
        let (report, _) = evaluate(
            model,
            &self.vocab,
            &self.bench.corpus,
            &self.bench.eval_queries,
            &self.bench.qrels,
            &METRICS,
            self.config.eval,
            label,
        )?;
        Ok(report)
    }

    pub fn pretrain(&self, paradigm: Paradigm, arm: Arm, seed: u64) -> Result<RunResult, StudyError> {
        let cfg = self.train_config(paradigm, arm, seed);
        let model = Model::new(cfg.model.clone(), seed)?;
        let out = run_pretraining(
            &cfg,
            model,
            PretrainData {
                passages: &self.tokenized.bodies,
                expansions: Some(&self.aligned),
            },
            &mut |_| Ok(()),
        )?;
        let report = self.evaluate(&out.model, &format!("{paradigm}-{}-{seed}", arm.name()))?;
        Ok(RunResult {
            arm,
            paradigm,
            seed,
            report,
            train: out.report,
            model: out.model,
        })
    }

    /// Fine-tunes `model` on the benchmark's training triples and evaluates.
    pub fn finetune(&self, model: Model<f32>, seed: u64, label: &str) -> Result<MetricReport, StudyError> {
        let examples = resolve_triples(&self.bench.train_triples, &self.bench.corpus, &self.vocab)?;
        let cfg = FinetuneConfig {
            seed,
            ..self.config.finetune.clone()
        };
        let (model, _) = run_finetune(&cfg, model, &self.tokenized.bodies, &examples)?;
        self.evaluate(&model, label)
    }
}

/// Plain-text comparison table of runs.
pub fn comparison_table(runs: &[&RunResult]) -> String {
    let mut out = format!(
        "{:<12} {:<11} {:>5} {:>8} {:>8} {:>10}\n",
        "paradigm", "arm", "seed", "MRR@10", "nDCG@10", "Recall@50"
    );
    for r in runs {
        let m = |x| r.report.mean(x).unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{:<12} {:<11} {:>5} {:>8.4} {:>8.4} {:>10.4}\n",
            r.paradigm.to_string(),
            r.arm.name(),
            r.seed,
            m(Metric::Mrr(10)),
            m(Metric::Ndcg(10)),
            m(Metric::Recall(50))
        ));
    }
    out
}
