use dexpt_core::checkpoint::write_file_atomic;
use dexpt_core::expand::expansions_to_jsonl;
use dexpt_core::retrieval::qrels_to_string;
use dexpt_core::study::{comparison_table, Arm, StudyConfig, StudyData};
use dexpt_core::train::Paradigm;

use crate::args::DemoArgs;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

/// Generates the topic benchmark, pre-trains the span-only baseline, the
/// expansion-query model and the curriculum model with matched budgets, and
/// prints zero-shot retrieval quality side by side.
pub fn run(args: &DemoArgs, mut m: ManifestBuilder) -> Result<(), CliError> {
    if args.steps == 0 || args.seeds == 0 {
        return Err(CliError::Usage("--steps and --seeds must be positive".into()));
    }
    let mut config = StudyConfig::standard();
    config.corpus.n_passages = args.passages;
    if config.corpus.n_passages < config.corpus.n_topics {
        return Err(CliError::Usage(format!("--passages must be at least {}", config.corpus.n_topics)));
    }
    config.contrastive.total_steps = args.steps;
    let data = StudyData::prepare(config.clone()).map_err(|e| CliError::Data(e.to_string()))?;
    let expansions = data.expansions.total_queries();
    println!(
        "corpus: {} passages over {} topics; {} held-out queries; {expansions} expansion queries",
        data.bench.corpus.len(),
        config.corpus.n_topics,
        data.bench.eval_queries.len(),
    );
    if let Some(r) = data.expansions.records.first() {
        let shown: Vec<&str> = r.queries.iter().map(String::as_str).take(3).collect();
        println!("example expansion for {}: {shown:?}", r.passage_id);
    }
    let mut runs = Vec::new();
    for seed in 0..args.seeds as u64 {
        for arm in [Arm::Baseline, Arm::Expanded, Arm::Curriculum] {
            eprintln!("pre-training {} (seed {seed}, {} steps)...", arm.name(), args.steps);
            runs.push(
                data.pretrain(Paradigm::Contrastive, arm, seed)
                    .map_err(|e| CliError::Data(e.to_string()))?,
            );
        }
    }
    let refs: Vec<_> = runs.iter().collect();
    let table = comparison_table(&refs);
    println!("\nzero-shot retrieval on held-out queries\n{table}");

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(dir.display(), e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            write_file_atomic(&p, text.as_bytes()).map_err(|e| CliError::data(p.display(), e))?;
            Ok::<_, CliError>(p)
        };
        let table_path = write("comparison.txt", table)?;
        let corpus_path = write("corpus.tsv", data.bench.corpus.to_tsv())?;
        let queries_path = write("queries.tsv", data.bench.eval_queries.to_tsv())?;
        let qrels_path = write("qrels.txt", qrels_to_string(&data.bench.qrels))?;
        let exp_path = write("expansions.jsonl", expansions_to_jsonl(&data.expansions.records))?;
        let triples: String = data
            .bench
            .train_triples
            .iter()
            .map(|t| serde_json::to_string(t).expect("triple serializes") + "\n")
            .collect();
        let triples_path = write("triples.jsonl", triples)?;
        m.config(&config);
        m.write(&[&table_path, &corpus_path, &queries_path, &qrels_path, &exp_path, &triples_path])?;
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}
