//! Command-line entry points: train a model, evaluate translations,
//! run experiment plans, and generate toy corpora.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use nsl_mt::corpus::{
    corpus_hash, generate_toy_corpus, load_corpus, make_splits, write_corpus, CorpusFormat,
    ToyLanguageSpec,
};
use nsl_mt::harness::{builtin_plan, builtin_plan_names, observations, run_and_report, ExperimentPlan};
use nsl_mt::metrics::{bootstrap_ci, Metric, MetricReport};
use nsl_mt::model::{ModelConfig, Seq2SeqModel, Tokenizer};
use nsl_mt::rules::{ruleset_hash, RuleSet};
use nsl_mt::trainer::{TrainConfig, Trainer};

#[derive(Parser)]
#[command(
    name = "nsl-mt",
    version,
    about = "Train and evaluate translation models that learn from grammatical violations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a parallel corpus and write a checkpoint directory.
    Train {
        /// Corpus file (TSV `source<TAB>target` or JSONL).
        #[arg(long)]
        corpus: PathBuf,
        /// Corpus format; inferred from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
        /// Rule file path, or "toy" for the embedded toy rule set.
        #[arg(long)]
        rules: String,
        /// TOML file with [model], [train], and [splits] sections.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint, log, and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score hypotheses against references and print MetricReport JSON.
    Evaluate {
        /// Hypothesis file, one segment per line.
        #[arg(long)]
        hyp: PathBuf,
        /// Reference file, one segment per line.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Comma-separated metric names.
        #[arg(long, value_delimiter = ',', default_value = "bleu,chrfpp")]
        metrics: Vec<String>,
        /// Bootstrap iterations for the 95% interval; 0 skips the interval.
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run or list experiment plans.
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
    /// Generate a toy parallel corpus file.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// "tsv" or "jsonl"; inferred from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
    },
    /// Translate source lines from stdin or a file with a trained checkpoint.
    Decode {
        /// Checkpoint directory or model.json file produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Source file, one sentence per line.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run a plan (a builtin name or a TOML file path) and write its report.
    Run {
        plan: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the builtin plans.
    ListPlans,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct SplitsSection {
    sizes: Option<[usize; 3]>,
    seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TrainFileConfig {
    model: ModelConfig,
    train: TrainConfig,
    splits: SplitsSection,
}

#[derive(Serialize)]
struct TrainRunManifest {
    version: String,
    corpus: PathBuf,
    corpus_hash: String,
    n_pairs: usize,
    splits: [usize; 3],
    split_seed: u64,
    ruleset: String,
    ruleset_hash: String,
    model: ModelConfig,
    train: TrainConfig,
}

fn parse_format(name: Option<&str>, path: &Path) -> Result<CorpusFormat> {
    match name {
        Some("tsv") => Ok(CorpusFormat::Tsv),
        Some("jsonl") => Ok(CorpusFormat::Jsonl),
        Some(other) => bail!("unknown corpus format {other:?}; use tsv or jsonl"),
        None => Ok(match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }),
    }
}

fn load_rules(spec: &str) -> Result<RuleSet> {
    if spec == "toy" {
        Ok(RuleSet::toy())
    } else {
        RuleSet::load(Path::new(spec)).with_context(|| format!("loading rules from {spec}"))
    }
}

fn parse_metric(name: &str) -> Result<Metric> {
    match name {
        "bleu" => Ok(Metric::Bleu),
        "chrfpp" => Ok(Metric::ChrfPp),
        other => bail!("unknown metric {other:?}; known metrics: bleu, chrfpp"),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn cmd_train(
    corpus: &Path,
    format: Option<&str>,
    rules_spec: &str,
    config_path: &Path,
    out: &Path,
) -> Result<()> {
    let config_text = fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let file: TrainFileConfig =
        toml::from_str(&config_text).with_context(|| "parsing the training config")?;

    let format = parse_format(format, corpus)?;
    let pairs = load_corpus(corpus, format)?;
    let sizes = match file.splits.sizes {
        Some(sizes) => sizes,
        None => {
            // 90/5/5 split, remainders to train.
            let n = pairs.len();
            let val = (n / 20).max(1);
            let test = (n / 20).max(1);
            if val + test >= n {
                bail!("corpus too small to split: {n} pairs");
            }
            [n - val - test, val, test]
        }
    };
    let split = make_splits(&pairs, (sizes[0], sizes[1], sizes[2]), file.splits.seed)?;

    let rules = load_rules(rules_spec)?;
    let tokenizer = Tokenizer::from_pairs(&split.train);
    let model = Seq2SeqModel::new(file.model.clone(), tokenizer, file.train.seed)?;
    let mut trainer = Trainer::new(model, rules.clone(), file.train.clone())?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join("log.jsonl");
    let mut log = fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    let summary = trainer.run(&split, &mut log)?;
    trainer.save_checkpoint(out)?;

    let manifest = TrainRunManifest {
        version: format!("nsl-mt-{}", env!("CARGO_PKG_VERSION")),
        corpus: corpus.to_path_buf(),
        corpus_hash: corpus_hash(&pairs),
        n_pairs: pairs.len(),
        splits: sizes,
        split_seed: file.splits.seed,
        ruleset: rules_spec.to_string(),
        ruleset_hash: ruleset_hash(&rules),
        model: file.model,
        train: file.train,
    };
    let manifest_path = out.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    fs::write(&manifest_path, body)
        .with_context(|| format!("writing {}", manifest_path.display()))?;

    println!(
        "trained {} steps over {} epochs; validation positive loss per epoch: {:?}",
        summary.global_step,
        summary.val_positive_loss_per_epoch.len(),
        summary.val_positive_loss_per_epoch
    );
    println!("checkpoint, log.jsonl, and manifest.json written to {}", out.display());
    Ok(())
}

fn cmd_evaluate(
    hyp: &Path,
    reference: &Path,
    metric_names: &[String],
    bootstrap: usize,
    seed: u64,
) -> Result<()> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    let mut reports: Vec<MetricReport> = Vec::new();
    for name in metric_names {
        let metric = parse_metric(name)?;
        let report = if bootstrap == 0 {
            metric.report(&hyps, &refs)?
        } else {
            bootstrap_ci(metric, &hyps, &refs, bootstrap, seed)?
        };
        reports.push(report);
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

fn cmd_experiment_run(plan_spec: &str, out: &Path) -> Result<()> {
    let plan: ExperimentPlan = if builtin_plan_names().contains(&plan_spec) {
        builtin_plan(plan_spec)?
    } else {
        ExperimentPlan::load(Path::new(plan_spec))?
    };
    eprintln!(
        "running {} ({}): this trains one model per cell",
        plan.name, plan.kind
    );
    let (rows, paths) = run_and_report(&plan, out)?;
    println!("{} rows written to {}", rows.len(), paths.results_csv.display());
    for note in observations(&rows) {
        println!("observation: {note}");
    }
    Ok(())
}

fn cmd_gen_corpus(out: &Path, size: usize, seed: u64, format: Option<&str>) -> Result<()> {
    let format = parse_format(format, out)?;
    let spec = ToyLanguageSpec {
        seed,
        ..Default::default()
    };
    let pairs = generate_toy_corpus(&spec, size);
    write_corpus(&pairs, out, format)?;
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

fn cmd_decode(model_path: &Path, input: &Path) -> Result<()> {
    let file = if model_path.is_dir() {
        model_path.join("model.json")
    } else {
        model_path.to_path_buf()
    };
    let model = Seq2SeqModel::load(&file)?;
    for line in read_lines(input)? {
        println!("{}", model.greedy_decode(&line)?);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train {
            corpus,
            format,
            rules,
            config,
            out,
        } => cmd_train(corpus, format.as_deref(), rules, config, out),
        Command::Evaluate {
            hyp,
            reference,
            metrics,
            bootstrap,
            seed,
        } => cmd_evaluate(hyp, reference, metrics, *bootstrap, *seed),
        Command::Experiment { command } => match command {
            ExperimentCommand::Run { plan, out } => cmd_experiment_run(plan, out),
            ExperimentCommand::ListPlans => {
                for name in builtin_plan_names() {
                    let plan = builtin_plan(name)?;
                    println!("{name}\t{}", plan.kind);
                }
                Ok(())
            }
        },
        Command::GenCorpus {
            out,
            size,
            seed,
            format,
        } => cmd_gen_corpus(out, *size, *seed, format.as_deref()),
        Command::Decode { model, input } => cmd_decode(model, input),
    }
}
