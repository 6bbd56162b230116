use std::path::{Path, PathBuf};

use dexpt_core::checkpoint::{write_file_atomic, Checkpoint};
use dexpt_core::data::{read_corpus, Corpus, TokenizedCorpus, Vocab};
use dexpt_core::expand::{
    expand_remote, expand_synthetic, load_expansions, persist_expansions, EndpointConfig, GenerationParams,
    HttpCompletion, PromptTemplate,
};
use dexpt_core::model::{Model, Tower};
use dexpt_core::retrieval::{
    encode_texts, evaluate, read_qrels, run_to_string, EncodeOptions, EvalOptions, Metric,
};
use dexpt_core::train::{
    read_triples, resolve_triples, run_finetune, run_pretraining, ContextSource, FinetuneConfig, Paradigm,
    PretrainData, StagePlan, TrainConfig,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::*;
use crate::error::CliError;
use crate::manifest::{now_rfc3339, ManifestBuilder};

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_file_atomic(path, text.as_bytes()).map_err(|e| CliError::data(path.display(), e))
}

/// `<path><suffix>`, e.g. `model.ckpt` → `model.ckpt.report.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Recursively overlays `over` onto `base`. Tables carrying a `kind` tag
/// (tagged enums) replace the base value instead of merging into it.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if v.is_object() && !v.get("kind").is_some() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Preset, then the optional TOML file on top.
fn layered<T: Serialize + DeserializeOwned>(preset: T, file: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = file else { return Ok(preset) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))?;
    let table: toml::Value =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut value = serde_json::to_value(preset).expect("preset serializes");
    merge(&mut value, serde_json::to_value(table).expect("toml converts"));
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn train_preset(preset: PresetArg, paradigm: Paradigm) -> TrainConfig {
    match preset {
        PresetArg::Desk => TrainConfig::desk(paradigm),
        PresetArg::Full => TrainConfig::full(paradigm),
        PresetArg::Tiny => TrainConfig::tiny(paradigm),
    }
}

pub fn build_vocab(args: &BuildVocabArgs, mut m: ManifestBuilder) -> Result<(), CliError> {
    let corpus = read_corpus(&args.corpus)?;
    let vocab = Vocab::build(corpus.texts(), args.max_size, args.min_freq)?;
    write_text(&args.out, &vocab.to_file_string())?;
    m.input(&args.corpus)
        .config(serde_json::json!({ "max_size": args.max_size, "min_freq": args.min_freq }));
    m.write(&[&args.out])?;
    tracing::info!("wrote {} tokens ({} with specials) to {}", vocab.len() - 5, vocab.len(), args.out.display());
    Ok(())
}

fn load_template(spec: &str) -> Result<(PromptTemplate, Option<PathBuf>), CliError> {
    match spec {
        "zero-shot" => Ok((PromptTemplate::zero_shot(), None)),
        "few-shot" => Ok((PromptTemplate::few_shot(), None)),
        path => {
            let path = PathBuf::from(path);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::data(path.display(), e))?;
            Ok((PromptTemplate::from_toml(&text)?, Some(path)))
        }
    }
}

pub fn expand(args: &ExpandArgs, mut m: ManifestBuilder) -> Result<(), CliError> {
    let corpus = read_corpus(&args.corpus)?;
    let created_at = args.created_at.clone().unwrap_or_else(now_rfc3339);
    m.pin("--created-at", &created_at);
    m.input(&args.corpus).seed(args.seed);
    let records = if args.synthetic {
        if args.n == 0 {
            return Err(CliError::Usage("--n must be at least 1".into()));
        }
        let (records, shortfalls) = expand_synthetic(corpus.passages(), args.n, args.seed, &created_at)?;
        if shortfalls > 0 {
            tracing::warn!("{shortfalls} passages produced fewer than {} distinct queries", args.n);
        }
        m.config(serde_json::json!({ "generator": "synthetic", "n": args.n, "seed": args.seed }));
        records
    } else {
        let (template, template_path) = load_template(&args.template)?;
        if let Some(p) = &template_path {
            m.input(p);
        }
        let params = GenerationParams {
            top_p: args.top_p,
            top_k: args.top_k,
            temperature: args.temperature,
            max_new_tokens: args.max_new_tokens,
            n_queries: args.n,
        };
        params.validate()?;
        let endpoint = EndpointConfig {
            url: args.endpoint.clone().expect("required unless --synthetic"),
            model: args.model.clone(),
            auth_env: args.auth_env.clone(),
            timeout_secs: args.timeout,
            retries: args.retries,
            backoff_ms: args.backoff_ms,
            rate_limit_per_sec: args.rate_limit,
        };
        m.config(serde_json::json!({ "endpoint": endpoint, "params": params, "template": template }));
        let client = HttpCompletion::new(endpoint)?;
        let out = expand_remote(&client, &template, corpus.passages(), &params, args.workers, &created_at)?;
        if !out.empty.is_empty() {
            tracing::warn!("{} passages got no parsable queries and were skipped", out.empty.len());
        }
        out.records
    };
    persist_expansions(&args.out, &records)?;
    m.write(&[&args.out])?;
    let total: usize = records.iter().map(|r| r.queries.len()).sum();
    tracing::info!("wrote {total} queries for {} passages to {}", records.len(), args.out.display());
    Ok(())
}

pub fn pretrain(args: &PretrainArgs, mut m: ManifestBuilder) -> Result<(), CliError> {
    let corpus = read_corpus(&args.corpus)?;
    let vocab = Vocab::read(&args.vocab)?;
    let paradigm = match args.paradigm {
        Some(ParadigmArg::Contrastive) => Paradigm::Contrastive,
        Some(ParadigmArg::Bottleneck) => Paradigm::Bottleneck,
        None => Paradigm::Contrastive,
    };
    let mut cfg = layered(train_preset(args.preset, paradigm), args.config.as_deref())?;
    if args.paradigm.is_some() && cfg.paradigm != paradigm {
        cfg.paradigm = paradigm;
    }
    if let Some(v) = args.steps {
        cfg.total_steps = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.grad_accum {
        cfg.grad_accum = v;
    }
    if let Some(v) = args.lr {
        cfg.peak_lr = v;
    }
    if let Some(v) = args.mask_ratio {
        cfg.mask_ratio = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(f) = args.curriculum {
        cfg.plan = StagePlan::Curriculum {
            stage1_fraction: f,
            stage2_lr: args.stage2_lr,
        };
    } else if let Some(c) = args.context {
        cfg.plan = StagePlan::Single {
            context: match c {
                ContextArg::Coarse => ContextSource::Coarse,
                ContextArg::Expansions => ContextSource::Expansions,
            },
        };
    } else if let (Some(lr), StagePlan::Curriculum { stage2_lr, .. }) = (args.stage2_lr, &mut cfg.plan) {
        *stage2_lr = Some(lr);
    }
    cfg.model.encoder.vocab_size = vocab.len();
    cfg.validate()?;
    cfg.model.validate()?;

    let tokenized = TokenizedCorpus::new(&corpus, &vocab);
    m.input(&args.corpus).input(&args.vocab).config(&cfg).seed(cfg.seed);
    let expansions = if cfg.needs_expansions() {
        let path = args.expansions.as_ref().ok_or_else(|| {
            CliError::Usage("this schedule uses expansion queries; pass --expansions FILE".into())
        })?;
        let loaded = load_expansions(path, &corpus)?;
        if !loaded.orphans.is_empty() {
            tracing::warn!(
                "{} expansion records name passages missing from the corpus and were skipped (e.g. `{}`)",
                loaded.orphans.len(),
                loaded.orphans[0]
            );
        }
        m.input(path);
        Some(loaded.aligned(&corpus, &vocab))
    } else {
        None
    };
    tracing::info!(
        "pre-training {} for {} steps ({} stage-1 steps), batch {}×{}",
        cfg.paradigm,
        cfg.total_steps,
        cfg.stage1_steps(),
        cfg.batch_size,
        cfg.grad_accum
    );
    let model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let config_echo = serde_json::to_value(&cfg).expect("config serializes");
    let stage1_path = sibling(&args.out, ".stage1");
    let mut wrote_stage1 = false;
    let outcome = run_pretraining(
        &cfg,
        model,
        PretrainData {
            passages: &tokenized.bodies,
            expansions: expansions.as_deref(),
        },
        &mut |ev| {
            if ev.label == "stage1" && args.save_stage1 {
                Checkpoint {
                    model: ev.model.clone(),
                    vocab: vocab.clone(),
                    train_config: config_echo.clone(),
                    label: "stage1".into(),
                }
                .save(&stage1_path)?;
                wrote_stage1 = true;
            }
            Ok(())
        },
    )?;
    tracing::info!("finished in {:.1}s", outcome.report.wall_clock_secs);
    Checkpoint {
        model: outcome.model,
        vocab,
        train_config: config_echo,
        label: "final".into(),
    }
    .save(&args.out)?;
    let report_path = sibling(&args.out, ".report.json");
    write_text(&report_path, &(serde_json::to_string_pretty(&outcome.report).expect("report serializes") + "\n"))?;
    let mut outputs: Vec<&Path> = vec![&args.out, &report_path];
    if wrote_stage1 {
        outputs.push(&stage1_path);
    }
    m.write(&outputs)?;
    Ok(())
}

pub fn finetune(args: &FinetuneArgs, mut m: ManifestBuilder) -> Result<(), CliError> {
    let corpus = read_corpus(&args.corpus)?;
    let (model, vocab) = match (&args.init, args.random_init) {
        (Some(path), false) => {
            m.input(path);
            let ck = Checkpoint::load(path)?;
            (ck.model, ck.vocab)
        }
        (None, true) => {
            let vpath = args.vocab.as_ref().expect("clap requires --vocab");
            m.input(vpath);
            let vocab = Vocab::read(vpath)?;
            let mut mc = train_preset(args.preset, Paradigm::Contrastive).model;
            mc.encoder.vocab_size = vocab.len();
            let seed = args.seed.unwrap_or(42);
            (Model::<f32>::new(mc, seed)?, vocab)
        }
        _ => return Err(CliError::Usage("give exactly one of --init or --random-init".into())),
    };
    let preset = match args.preset {
        PresetArg::Desk => FinetuneConfig::desk(),
        PresetArg::Full => FinetuneConfig::full(),
        PresetArg::Tiny => FinetuneConfig::tiny(),
    };
    let mut cfg = layered(preset, args.config.as_deref())?;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.negatives {
        cfg.negatives = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let triples = read_triples(&args.triples)?;
    let examples = resolve_triples(&triples, &corpus, &vocab)?;
    let tokenized = TokenizedCorpus::new(&corpus, &vocab);
    m.input(&args.corpus).input(&args.triples).config(&cfg).seed(cfg.seed);
    tracing::info!("fine-tuning on {} examples for {} epochs", examples.len(), cfg.epochs);
    let (model, report) = run_finetune(&cfg, model, &tokenized.bodies, &examples)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        tracing::info!("epoch {} mean loss {l:.4}", e + 1);
    }
    Checkpoint {
        model,
        vocab,
        train_config: serde_json::to_value(&cfg).expect("config serializes"),
        label: "finetuned".into(),
    }
    .save(&args.out)?;
    let report_path = sibling(&args.out, ".report.json");
    write_text(&report_path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    m.write(&[&args.out, &report_path])?;
    Ok(())
}

fn items(c: &Corpus) -> Vec<(String, String)> {
    c.passages().iter().map(|p| (p.id.clone(), p.text.clone())).collect()
}

pub fn encode(args: &EncodeArgs, mut m: ManifestBuilder) -> Result<(), CliError> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let input = read_corpus(&args.input)?;
    let tower = match args.tower {
        TowerArg::Passage => Tower::Passage,
        TowerArg::Query => Tower::Query,
    };
    let matrix = encode_texts(
        &ck.model,
        &ck.vocab,
        &items(&input),
        EncodeOptions {
            tower,
            max_len: args.max_len,
            batch_size: args.batch_size,
            shards: args.shards,
        },
    )?;
    let mut out = String::new();
    for (i, id) in matrix.ids().iter().enumerate() {
        out.push_str(&serde_json::json!({ "id": id, "vector": matrix.row(i) }).to_string());
        out.push('\n');
    }
    write_text(&args.out, &out)?;
    m.input(&args.checkpoint).input(&args.input).config(serde_json::json!({
        "tower": format!("{:?}", args.tower).to_lowercase(),
        "max_len": args.max_len,
        "batch_size": args.batch_size,
    }));
    m.write(&[&args.out])?;
    tracing::info!("encoded {} rows of dimension {}", matrix.len(), matrix.dim());
    Ok(())
}

pub fn eval(args: &EvalArgs, mut m: ManifestBuilder) -> Result<(), CliError> {
    let metrics: Vec<Metric> = args
        .metrics
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Metric>())
        .collect::<Result<_, _>>()?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let corpus = read_corpus(&args.corpus)?;
    let queries = read_corpus(&args.queries)?;
    let qrels = read_qrels(&args.qrels)?;
    let opts = EvalOptions {
        depth: args.depth,
        batch_size: args.batch_size,
        shards: args.shards,
        passage_max_len: args.passage_max_len,
        query_max_len: args.query_max_len,
    };
    let tag = args
        .checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().replace(char::is_whitespace, "_"))
        .unwrap_or_else(|| "dexpt".into());
    let (report, search) = evaluate(&ck.model, &ck.vocab, &corpus, &queries, &qrels, &metrics, opts, &tag)?;
    if let Some(k) = search.clipped_to {
        tracing::warn!("ranking depth clipped to the corpus size {k}");
    }
    if !report.excluded.is_empty() {
        tracing::warn!("{} queries have no relevant passage in the qrels and were excluded", report.excluded.len());
    }
    write_text(&args.out_report, &report.to_jsonl())?;
    write_text(&args.out_run, &run_to_string(&search.run, &tag))?;
    m.input(&args.checkpoint)
        .input(&args.corpus)
        .input(&args.queries)
        .input(&args.qrels)
        .config(serde_json::json!({
            "metrics": metrics,
            "depth": args.depth,
            "passage_max_len": args.passage_max_len,
            "query_max_len": args.query_max_len,
        }));
    m.write(&[&args.out_report, &args.out_run])?;
    print!("{}", report.table());
    Ok(())
}
