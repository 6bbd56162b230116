use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "dexpt",
    version = crate::manifest::VERSION,
    about = "Pre-train, fine-tune and evaluate dense passage retrievers with document-expansion queries",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Log filter (e.g. `info`, `dexpt_core=debug`).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a word vocabulary from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Generate expansion queries for every passage of a corpus.
    Expand(ExpandArgs),
    /// Pre-train an encoder (contrastive or bottleneck).
    Pretrain(PretrainArgs),
    /// Fine-tune an encoder on (query, positive, negatives) triples.
    Finetune(FinetuneArgs),
    /// Encode passages or queries into vectors.
    Encode(EncodeArgs),
    /// Retrieve and score against relevance judgments.
    Eval(EvalArgs),
    /// Run the synthetic baseline-vs-expansion comparison end to end.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Corpus file (TSV `id<TAB>text` or JSON lines `{"id", "text"}`).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output vocabulary file, one token per line.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30_000)]
    pub max_size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemplateChoice {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output expansion file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt template: a TOML file, or the built-in `zero-shot` / `few-shot`.
    #[arg(long, default_value = "few-shot")]
    pub template: String,
    /// Completion endpoint URL.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub endpoint: Option<String>,
    /// Use the offline keyword generator instead of an endpoint.
    #[arg(long)]
    pub synthetic: bool,
    /// Queries requested per passage.
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Model name sent to and recorded for the endpoint.
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the endpoint bearer token.
    #[arg(long)]
    pub auth_env: Option<String>,
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    /// Global request ceiling (requests per second).
    #[arg(long)]
    pub rate_limit: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f64,
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
    #[arg(long, default_value_t = 128)]
    pub max_new_tokens: usize,
    /// Timestamp stored on every record (RFC 3339); defaults to now.
    #[arg(long)]
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParadigmArg {
    Contrastive,
    Bottleneck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// CPU-sized defaults.
    Desk,
    /// The published full-scale recipe (reference only).
    Full,
    /// Minimal model for smoke tests.
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    Coarse,
    Expansions,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Expansion file; required unless training on coarse contexts only.
    #[arg(long)]
    pub expansions: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file overriding the preset (any subset of fields).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
    #[arg(long, value_enum)]
    pub paradigm: Option<ParadigmArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub grad_accum: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Two-stage schedule: fraction of steps on coarse contexts.
    #[arg(long, conflicts_with = "context")]
    pub curriculum: Option<f64>,
    /// Constant learning rate of the second stage.
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    /// Single-stage schedule using one context source throughout.
    #[arg(long, value_enum)]
    pub context: Option<ContextArg>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the stage-1 checkpoint next to the output.
    #[arg(long)]
    pub save_stage1: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Checkpoint to start from; omit with `--random-init`.
    #[arg(long, required_unless_present = "random_init")]
    pub init: Option<PathBuf>,
    /// Start from random weights (requires `--vocab`).
    #[arg(long, requires = "vocab")]
    pub random_init: bool,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON lines `{"query", "positive_id", "negative_ids"}`.
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TowerArg {
    Passage,
    Query,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Passages or queries (same formats as a corpus).
    #[arg(long)]
    pub input: PathBuf,
    /// Output vectors, JSON lines `{"id", "vector"}`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = TowerArg::Passage)]
    pub tower: TowerArg,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// TREC qrels `qid 0 pid grade`.
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated metrics.
    #[arg(long, value_delimiter = ',', default_value = "mrr@10,recall@50,ndcg@10")]
    pub metrics: Vec<String>,
    /// Ranking depth of the run file.
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    /// Metric report (JSON lines).
    #[arg(long)]
    pub out_report: PathBuf,
    /// TREC run file.
    #[arg(long)]
    pub out_run: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub passage_max_len: usize,
    #[arg(long, default_value_t = 32)]
    pub query_max_len: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Directory for the generated corpus, expansions and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pre-training steps per run.
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Passages in the generated corpus.
    #[arg(long, default_value_t = 2000)]
    pub passages: usize,
}
