use std::fmt;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    /// MLM plus a single-layer decoder that regenerates the context from
    /// the `[CLS]` state.
    Bottleneck,
    /// MLM plus an auxiliary head and an in-batch contrastive loss.
    Contrastive,
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::Bottleneck => "bottleneck",
            Paradigm::Contrastive => "contrastive",
        })
    }
}

/// Where training contexts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextSource {
    /// Random crops (contrastive) or the passage itself (bottleneck).
    Coarse,
    /// Document-expansion queries.
    Expansions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StagePlan {
    /// Coarse contexts with a warmup-cosine schedule for the first
    /// `ceil(stage1_fraction * total_steps)` steps, then expansion queries at
    /// a constant learning rate. Parameters and optimizer moments carry over.
    Curriculum {
        stage1_fraction: f64,
        /// Stage-2 learning rate; defaults to the schedule's value at the
        /// boundary.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage2_lr: Option<f64>,
    },
    /// One context source throughout, warmup-cosine schedule.
    Single { context: ContextSource },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub mask_ratio: f64,
    pub seed: u64,
    /// Inclusive span-length range for random crops, in body tokens.
    pub span_min: usize,
    pub span_max: usize,
    /// Maximum tokens per passage row, including `[CLS]` and `[SEP]`.
    pub passage_max_len: usize,
    /// Maximum tokens per query row, including `[CLS]` and `[SEP]`.
    pub query_max_len: usize,
    /// Average the context-anchored contrastive direction into the loss.
    pub symmetric_infonce: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    pub plan: StagePlan,
    /// Architecture; `vocab_size` is replaced by the vocabulary in use.
    pub model: ModelConfig,
}

impl TrainConfig {
    /// CPU-sized defaults: batch 32 accumulated 4 times, 2,000 steps,
    /// d_model 128, 75/25 curriculum.
    pub fn desk(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            total_steps: 2000,
            batch_size: 32,
            grad_accum: 4,
            peak_lr: match paradigm {
                Paradigm::Bottleneck => 3e-4,
                Paradigm::Contrastive => 1e-4,
            },
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            mask_ratio: 0.3,
            seed: 42,
            span_min: 32,
            span_max: 96,
            passage_max_len: 128,
            query_max_len: 32,
            symmetric_infonce: false,
            max_grad_norm: None,
            plan: StagePlan::Curriculum {
                stage1_fraction: 0.75,
                stage2_lr: None,
            },
            model: ModelConfig::desk(0),
        }
    }

    /// The published full-scale recipe, kept for reference: batch 2,048,
    /// 80k steps at 3e-4 (bottleneck) or 120k steps at 1e-4 (contrastive),
    /// BERT-base shaped encoder.
    pub fn full(paradigm: Paradigm) -> Self {
        let mut cfg = Self::desk(paradigm);
        cfg.batch_size = 2048;
        cfg.grad_accum = 1;
        cfg.total_steps = match paradigm {
            Paradigm::Bottleneck => 80_000,
            Paradigm::Contrastive => 120_000,
        };
        cfg.passage_max_len = 512;
        cfg.query_max_len = 64;
        cfg.model = ModelConfig::base(0);
        cfg
    }

    /// A few seconds of training on the tiny architecture, for smoke tests.
    pub fn tiny(paradigm: Paradigm) -> Self {
        Self {
            total_steps: 20,
            batch_size: 4,
            grad_accum: 1,
            peak_lr: 1e-3,
            span_min: 4,
            span_max: 12,
            passage_max_len: 24,
            query_max_len: 12,
            model: ModelConfig::tiny(0),
            ..Self::desk(paradigm)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.total_steps == 0 || self.batch_size == 0 || self.grad_accum == 0 {
            return bad("total_steps, batch_size and grad_accum must be positive".into());
        }
        if self.paradigm == Paradigm::Contrastive && self.batch_size < 2 {
            return bad("contrastive pre-training needs batch_size >= 2 for in-batch negatives".into());
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be a finite non-negative number", self.peak_lr));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} not in [0, 1]", self.warmup_ratio));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} not in [0, 1)", self.mask_ratio));
        }
        if self.span_min == 0 || self.span_min > self.span_max {
            return bad(format!("span range [{}, {}] is empty", self.span_min, self.span_max));
        }
        let max = self.model.encoder.max_seq_len;
        if self.passage_max_len < 3 || self.passage_max_len > max || self.query_max_len < 3 || self.query_max_len > max {
            return bad(format!(
                "passage_max_len {} and query_max_len {} must lie in 3..={max}",
                self.passage_max_len, self.query_max_len
            ));
        }
        if let StagePlan::Curriculum { stage1_fraction, stage2_lr } = &self.plan {
            if !(0.0..=1.0).contains(stage1_fraction) {
                return bad(format!("stage1_fraction {stage1_fraction} not in [0, 1]"));
            }
            if stage2_lr.is_some_and(|lr| !(lr >= 0.0 && lr.is_finite())) {
                return bad("stage2_lr must be a finite non-negative number".into());
            }
        }
        Ok(())
    }

    /// Number of steps run on coarse contexts.
    pub fn stage1_steps(&self) -> usize {
        match &self.plan {
            StagePlan::Curriculum { stage1_fraction, .. } => {
                let raw = stage1_fraction * self.total_steps as f64;
                // Guard against 0.75 * 100 = 75.00000000000001 style rounding.
                let boundary = (raw - 1e-9).ceil().max(0.0) as usize;
                boundary.min(self.total_steps)
            }
            StagePlan::Single {
                context: ContextSource::Coarse,
            } => self.total_steps,
            StagePlan::Single {
                context: ContextSource::Expansions,
            } => 0,
        }
    }

    /// Whether any step uses expansion queries.
    pub fn needs_expansions(&self) -> bool {
        self.stage1_steps() < self.total_steps
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }
}

/// Retrieval fine-tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    /// Explicit negatives per query; missing ones are filled with random
    /// passages.
    pub negatives: usize,
    pub seed: u64,
    pub passage_max_len: usize,
    pub query_max_len: usize,
}

impl FinetuneConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 3,
            batch_size: 8,
            lr: 2e-5,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            negatives: 4,
            seed: 42,
            passage_max_len: 128,
            query_max_len: 32,
        }
    }

    /// Matches [`TrainConfig::tiny`].
    pub fn tiny() -> Self {
        Self {
            epochs: 1,
            batch_size: 4,
            lr: 1e-3,
            negatives: 1,
            passage_max_len: 24,
            query_max_len: 12,
            ..Self::desk()
        }
    }

    pub fn full() -> Self {
        Self {
            negatives: 15,
            passage_max_len: 512,
            query_max_len: 64,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(TrainError::Config("lr must be finite and non-negative, warmup_ratio in [0, 1]".into()));
        }
        if self.passage_max_len < 3 || self.query_max_len < 3 {
            return Err(TrainError::Config("max lengths must leave room for [CLS] and [SEP]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_arithmetic() {
        let mut cfg = TrainConfig::desk(Paradigm::Contrastive);
        cfg.total_steps = 100;
        assert_eq!(cfg.stage1_steps(), 75);
        cfg.plan = StagePlan::Curriculum {
            stage1_fraction: 1.0,
            stage2_lr: None,
        };
        assert_eq!(cfg.stage1_steps(), 100);
        assert!(!cfg.needs_expansions());
        cfg.plan = StagePlan::Curriculum {
            stage1_fraction: 0.755,
            stage2_lr: None,
        };
        assert_eq!(cfg.stage1_steps(), 76);
        cfg.plan = StagePlan::Single {
            context: ContextSource::Expansions,
        };
        assert_eq!(cfg.stage1_steps(), 0);
    }

    #[test]
    fn toml_round_trip() {
        for p in [Paradigm::Bottleneck, Paradigm::Contrastive] {
            for cfg in [TrainConfig::desk(p), TrainConfig::full(p)] {
                let text = cfg.to_toml();
                assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
            }
        }
        assert!(TrainConfig::from_toml("paradigm = \"contrastive\"\nbogus = 1").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::desk(Paradigm::Contrastive);
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::desk(Paradigm::Bottleneck);
        cfg.batch_size = 1;
        assert!(cfg.validate().is_ok());
        cfg.mask_ratio = 1.0;
        assert!(cfg.validate().is_err());
        assert_eq!(FinetuneConfig::full().negatives, 15);
        assert_eq!(FinetuneConfig::desk().negatives, 4);
    }
}
