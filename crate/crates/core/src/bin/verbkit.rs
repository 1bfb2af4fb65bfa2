use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use verbkit::experiment::{
    accuracy, ensemble_records, load_model, read_logits, run_benchmark, EmbeddingSource, ExperimentConfig, RunReport,
    VerbalizerKind,
};
use verbkit::{CoreWordForm, EmbeddingStore, MaskedLm, Strategy};

#[derive(Parser)]
#[command(name = "verbkit", version, about = "Prompt-based few-shot text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark described by a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report path (overrides the config).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate without training on a built-in dataset.
    ZeroShot {
        #[arg(long, default_value = "ag")]
        dataset: String,
        /// manual, maven or soft.
        #[arg(long, default_value = "manual")]
        verbalizer: String,
        #[arg(long, default_value_t = 15)]
        k: usize,
        #[arg(long, default_value = "roberta-large")]
        checkpoint: String,
        /// "lm", "word2vec:<path>" or "glove:<path>".
        #[arg(long, default_value = "lm")]
        embeddings: String,
        /// Test file; defaults to $VERBKIT_DATA_DIR/<dataset>/test.csv.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        test_limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        test_seed: u64,
        /// Comma-separated template ids (default: all).
        #[arg(long, value_delimiter = ',')]
        templates: Vec<u32>,
        #[arg(long, default_value = "logit")]
        ensemble: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Nearest neighbors of a word in an embedding space.
    Neighbors {
        #[arg(long)]
        word: String,
        #[arg(long, default_value_t = 15)]
        k: usize,
        #[arg(long, default_value = "lm")]
        embeddings: String,
        #[arg(long, default_value = "roberta-large")]
        checkpoint: String,
        /// Prefer the mid-sentence (leading-space) entry over the bare word.
        #[arg(long)]
        mid_sentence: bool,
    },
    /// Run a config and write per-member class logits as JSON lines into a directory.
    ExportLogits {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Combine exported logit files into ensemble predictions.
    Ensemble {
        #[arg(long, default_value = "logit")]
        strategy: String,
        /// Prediction output (JSON lines).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn print_report(report: &RunReport) {
    println!("config {}", report.config_hash);
    for v in &report.variants {
        for s in &v.seeds {
            let members: Vec<String> = s
                .members
                .iter()
                .map(|m| match (m.accuracy, &m.failure) {
                    (Some(a), _) => format!("T{}={:.2}", m.template_id, 100.0 * a),
                    (None, Some(f)) => format!("T{}=failed ({f})", m.template_id),
                    (None, None) => format!("T{}=n/a", m.template_id),
                })
                .collect();
            let ens = s
                .ensemble_accuracy
                .map_or("n/a".to_string(), |a| format!("{:.2}", 100.0 * a));
            println!("{} seed {}: {} ensemble={ens}", v.name, s.seed, members.join(" "));
        }
        match (v.mean, v.std) {
            (Some(m), Some(s)) => println!("{}: {:.2} ± {:.2}", v.name, 100.0 * m, 100.0 * s),
            _ => println!("{}: no successful seed", v.name),
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, output } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if output.is_some() {
                cfg.output = output;
            }
            print_report(&run_benchmark(&cfg)?);
        }
        Command::ZeroShot {
            dataset,
            verbalizer,
            k,
            checkpoint,
            embeddings,
            test,
            test_limit,
            test_seed,
            templates,
            ensemble,
            output,
        } => {
            let kind: VerbalizerKind = verbalizer.parse()?;
            if !matches!(kind, VerbalizerKind::Manual | VerbalizerKind::Maven | VerbalizerKind::Soft) {
                bail!("zero-shot supports manual, maven and soft verbalizers");
            }
            let mut cfg = ExperimentConfig {
                checkpoint,
                templates,
                n: 0,
                seeds: vec![0],
                ensemble: ensemble.parse()?,
                output,
                ..ExperimentConfig::default()
            };
            cfg.dataset.id = dataset;
            cfg.dataset.test = test;
            cfg.dataset.test_limit = test_limit;
            cfg.dataset.test_seed = test_seed;
            cfg.verbalizer.kind = kind;
            cfg.verbalizer.k = k;
            cfg.verbalizer.embeddings = embeddings.parse()?;
            print_report(&run_benchmark(&cfg)?);
        }
        Command::Neighbors {
            word,
            k,
            embeddings,
            checkpoint,
            mid_sentence,
        } => {
            let store = match embeddings.parse::<EmbeddingSource>()? {
                EmbeddingSource::Lm => load_model(&checkpoint)?.embedding_matrix()?,
                EmbeddingSource::External { format, path } => EmbeddingStore::load_external(path, format)?,
            };
            let form = if mid_sentence { CoreWordForm::MidSentence } else { CoreWordForm::Bare };
            let idx = form
                .resolve(&store, &word)
                .with_context(|| format!("{word:?} is not in the embedding vocabulary"))?;
            println!("query {:?}", store.words()[idx]);
            for (rank, n) in store.top_k_by_index(idx, k)?.iter().enumerate() {
                println!("{:>3} {:<24} {:.4}", rank + 1, format!("{:?}", n.word), n.similarity);
            }
        }
        Command::ExportLogits { config, dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.export_dir = Some(dir.clone());
            print_report(&run_benchmark(&cfg)?);
            println!("logits written to {}", dir.display());
        }
        Command::Ensemble { strategy, output, files } => {
            let strategy: Strategy = strategy.parse()?;
            let members = files
                .iter()
                .map(|f| read_logits(f).with_context(|| format!("reading {}", f.display())))
                .collect::<Result<Vec<_>>>()?;
            let predictions = ensemble_records(&members, strategy)?;
            if let Some(path) = output {
                let mut text = String::new();
                for p in &predictions {
                    text.push_str(&serde_json::to_string(p)?);
                    text.push('\n');
                }
                std::fs::write(path, text)?;
            }
            match accuracy(&predictions) {
                Some(a) => println!("{} examples, {strategy} accuracy {:.2}", predictions.len(), 100.0 * a),
                None => println!("{} examples, no gold labels", predictions.len()),
            }
        }
    }
    Ok(())
}
