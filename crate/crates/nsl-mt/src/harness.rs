//! Experiment driver: trains paired conditions on shared data and seeds and
//! emits result tables, plot-ready series, and per-cell run manifests.
//!
//! Every experiment is a set of cells that differ in exactly one declared
//! variable (method, constraint set, train size, alpha, or violation ratio)
//! while sharing the corpus, the split seed, and the model initialization
//! seed. The "normal" condition is plain maximum-likelihood training, i.e.
//! `alpha = 0` with an empty rule set.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    generate_toy_corpus, load_corpus, make_splits, subsample_train, CorpusError, CorpusFormat,
    ParallelPair, SplitCorpus, ToyLanguageSpec,
};
use crate::loss::LossReport;
use crate::metrics::{bootstrap_ci, Metric, MetricError, MetricReport};
use crate::model::{ModelConfig, ModelError, Seq2SeqModel, Tokenizer};
use crate::rules::{ruleset_hash, RuleCategory, RuleError, RuleSet};
use crate::trainer::{LogRecord, TrainConfig, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("could not parse plan {path}: {message}")]
    PlanParse { path: PathBuf, message: String },
    #[error("no builtin plan named {0:?}")]
    UnknownPlan(String),
    #[error("ruleset has no {category} rules")]
    MissingCategory { category: RuleCategory },
    #[error("could not write {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

// ───────────────────────── plans ─────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Compare,
    Ablation,
    DataEfficiency,
    AlphaSweep,
    RatioSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Compare => "compare",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::DataEfficiency => "data_efficiency",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::RatioSweep => "ratio_sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyPlan {
    pub size: usize,
    pub seed: u64,
}

/// Where the corpus comes from and how it is partitioned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusPlan {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<CorpusFormat>,
    #[serde(default)]
    pub toy: Option<ToyPlan>,
    /// Train, validation, test sizes.
    pub splits: [usize; 3],
    #[serde(default)]
    pub split_seed: u64,
}

impl CorpusPlan {
    fn load_pairs(&self) -> Result<Vec<ParallelPair>, HarnessError> {
        match (&self.path, &self.toy) {
            (Some(path), None) => {
                let format = self.format.unwrap_or_else(|| {
                    match path.extension().and_then(|e| e.to_str()) {
                        Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
                        _ => CorpusFormat::Tsv,
                    }
                });
                Ok(load_corpus(path, format)?)
            }
            (None, Some(toy)) => {
                let spec = ToyLanguageSpec {
                    seed: toy.seed,
                    ..Default::default()
                };
                Ok(generate_toy_corpus(&spec, toy.size))
            }
            _ => Err(HarnessError::Plan(
                "corpus needs exactly one of `path` or `toy`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepValues {
    /// `alpha_sweep`: swept loss weights, all positive (the alpha = 0
    /// control row is added automatically).
    pub alphas: Vec<f64>,
    /// `ratio_sweep`: violation-ratio labels, e.g. "4:1".
    pub ratios: Vec<String>,
    /// `data_efficiency`: train-set sizes, strictly ascending (the full
    /// train split is appended when missing).
    pub sizes: Vec<usize>,
}

fn default_ruleset() -> String {
    "toy".into()
}

fn default_replicates() -> Vec<u64> {
    vec![0]
}

fn default_bootstrap_iterations() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub kind: ExperimentKind,
    pub corpus: CorpusPlan,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// `"toy"` for the embedded rule set, otherwise a rule-file path.
    #[serde(default = "default_ruleset")]
    pub ruleset: String,
    #[serde(default)]
    pub sweep: SweepValues,
    /// One model-init/training seed per replicate; single seed by default.
    #[serde(default = "default_replicates")]
    pub replicate_seeds: Vec<u64>,
    #[serde(default = "default_bootstrap_iterations")]
    pub bootstrap_iterations: usize,
}

/// Maps a violation-ratio label to the per-pair violation count range that
/// realizes it: "2:1" draws 1-2 violations, "4:1" draws 3-5, "6:1" draws
/// 5-7.
pub fn ratio_bounds(label: &str) -> Result<(usize, usize), HarnessError> {
    match label {
        "2:1" => Ok((1, 2)),
        "4:1" => Ok((3, 5)),
        "6:1" => Ok((5, 7)),
        _ => Err(HarnessError::Plan(format!(
            "unknown violation ratio {label:?}; known ratios: 2:1, 4:1, 6:1"
        ))),
    }
}

pub const BUILTIN_PLANS: &[(&str, &str)] = &[
    ("compare", include_str!("../plans/compare.toml")),
    ("ablation", include_str!("../plans/ablation.toml")),
    ("data-efficiency", include_str!("../plans/data-efficiency.toml")),
    ("alpha-sweep", include_str!("../plans/alpha-sweep.toml")),
    ("ratio-sweep", include_str!("../plans/ratio-sweep.toml")),
];

pub fn builtin_plan_names() -> Vec<&'static str> {
    BUILTIN_PLANS.iter().map(|(name, _)| *name).collect()
}

pub fn builtin_plan(name: &str) -> Result<ExperimentPlan, HarnessError> {
    let text = BUILTIN_PLANS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| HarnessError::UnknownPlan(name.to_string()))?;
    ExperimentPlan::from_toml_str(text)
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str) -> Result<ExperimentPlan, HarnessError> {
        let plan: ExperimentPlan =
            toml::from_str(text).map_err(|e| HarnessError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<ExperimentPlan, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let plan: ExperimentPlan =
            toml::from_str(&text).map_err(|e| HarnessError::PlanParse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Plan(msg));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                self.name
            ));
        }
        if self.corpus.path.is_some() == self.corpus.toy.is_some() {
            return bad("corpus needs exactly one of `path` or `toy`".into());
        }
        if self.corpus.splits.iter().any(|&n| n == 0) {
            return bad(format!(
                "all three splits must be non-empty, got {:?}",
                self.corpus.splits
            ));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.replicate_seeds.is_empty() {
            return bad("at least one replicate seed is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &seed in &self.replicate_seeds {
            if !seen.insert(seed) {
                return bad(format!("replicate seeds must be distinct, {seed} repeats"));
            }
        }
        if self.bootstrap_iterations == 0 {
            return bad("bootstrap_iterations must be at least 1".into());
        }
        match self.kind {
            ExperimentKind::AlphaSweep => {
                if self.sweep.alphas.is_empty() {
                    return bad("alpha_sweep needs non-empty sweep.alphas".into());
                }
                for &a in &self.sweep.alphas {
                    if !a.is_finite() || a <= 0.0 {
                        return bad(format!(
                            "swept alphas must be positive (the alpha=0 control is automatic), got {a}"
                        ));
                    }
                }
                let mut sorted = self.sweep.alphas.clone();
                sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return bad("swept alphas must be distinct".into());
                }
            }
            ExperimentKind::RatioSweep => {
                if self.sweep.ratios.is_empty() {
                    return bad("ratio_sweep needs non-empty sweep.ratios".into());
                }
                for label in &self.sweep.ratios {
                    ratio_bounds(label)?;
                }
                let mut sorted = self.sweep.ratios.clone();
                sorted.sort();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return bad("swept ratios must be distinct".into());
                }
            }
            ExperimentKind::DataEfficiency => {
                if self.sweep.sizes.is_empty() {
                    return bad("data_efficiency needs non-empty sweep.sizes".into());
                }
                if self.sweep.sizes.windows(2).any(|w| w[0] >= w[1]) {
                    return bad(format!(
                        "sizes must be strictly ascending, got {:?}",
                        self.sweep.sizes
                    ));
                }
                if self.sweep.sizes[0] == 0 {
                    return bad("sizes must be positive".into());
                }
            }
            ExperimentKind::Compare | ExperimentKind::Ablation => {}
        }
        Ok(())
    }

    fn load_ruleset(&self) -> Result<RuleSet, HarnessError> {
        if self.ruleset == "toy" {
            Ok(RuleSet::toy())
        } else {
            Ok(RuleSet::load(Path::new(&self.ruleset))?)
        }
    }
}

// ───────────────────────── results ─────────────────────────

/// Everything needed to rerun one cell exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub condition: String,
    pub corpus_hash: String,
    pub split_seed: u64,
    pub splits: [usize; 3],
    /// Train-split size after any subsampling.
    pub train_size: usize,
    pub ruleset_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub replicate_seed: u64,
    pub bootstrap_iterations: usize,
}

pub fn manifest_hash(manifest: &RunManifest) -> String {
    let json = serde_json::to_string(manifest).expect("manifest serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One experiment cell: a trained condition with its evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub condition: String,
    /// "normal" (plain MLE) or "nsl".
    pub method: String,
    /// "none", "full", or a single rule category.
    pub constraint_set: String,
    pub train_size: usize,
    pub alpha: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub replicate_seed: u64,
    pub bleu: MetricReport,
    pub chrfpp: MetricReport,
    /// Learned metric, not computed here.
    pub comet: String,
    pub final_loss: LossReport,
    pub val_positive_loss: f64,
    /// Negatives per positive actually trained on.
    pub realized_ratio: f64,
    pub runtime_seconds: f64,
    pub manifest_hash: String,
    pub manifest: RunManifest,
}

// ───────────────────────── cells ─────────────────────────

#[derive(Debug, Clone)]
struct Cell {
    condition: String,
    method: &'static str,
    constraint_set: String,
    rules: RuleSet,
    alpha: f64,
    k_min: usize,
    k_max: usize,
    train_size: Option<usize>,
    replicate_seed: u64,
}

fn normal_cell(plan: &ExperimentPlan, language: &str, seed: u64, condition: &str) -> Cell {
    Cell {
        condition: condition.to_string(),
        method: "normal",
        constraint_set: "none".to_string(),
        rules: RuleSet::empty(language),
        alpha: 0.0,
        k_min: plan.train.k_min,
        k_max: plan.train.k_max,
        train_size: None,
        replicate_seed: seed,
    }
}

fn nsl_cell(plan: &ExperimentPlan, rules: &RuleSet, seed: u64, condition: &str) -> Cell {
    Cell {
        condition: condition.to_string(),
        method: "nsl",
        constraint_set: "full".to_string(),
        rules: rules.clone(),
        alpha: plan.train.alpha,
        k_min: plan.train.k_min,
        k_max: plan.train.k_max,
        train_size: None,
        replicate_seed: seed,
    }
}

fn run_cell(plan: &ExperimentPlan, base: &SplitCorpus, cell: Cell) -> Result<ResultRow, HarnessError> {
    let started = Instant::now();
    let split = match cell.train_size {
        Some(n) => subsample_train(base, n, plan.corpus.split_seed)?,
        None => base.clone(),
    };

    let mut config = plan.train.clone();
    config.alpha = cell.alpha;
    config.k_min = cell.k_min;
    config.k_max = cell.k_max;
    config.seed = cell.replicate_seed;

    let tokenizer = Tokenizer::from_pairs(&split.train);
    let model = Seq2SeqModel::new(plan.model.clone(), tokenizer, cell.replicate_seed)?;
    let mut trainer = Trainer::new(model, cell.rules.clone(), config.clone())?;
    let mut log = Vec::new();
    let summary = trainer.run(&split, &mut log)?;

    let mut n_pos = 0usize;
    let mut n_neg = 0usize;
    let mut final_loss = None;
    for line in String::from_utf8(log).expect("log is UTF-8 JSON").lines() {
        let record: LogRecord = serde_json::from_str(line).expect("log lines parse");
        if let LogRecord::Step(report) = record {
            n_pos += report.n_pos;
            n_neg += report.n_neg;
            final_loss = Some(report);
        }
    }
    let final_loss = final_loss.expect("training ran at least one step");
    let realized_ratio = n_neg as f64 / n_pos as f64;
    let val_positive_loss = *summary
        .val_positive_loss_per_epoch
        .last()
        .expect("at least one epoch");

    let refs: Vec<String> = split.test.iter().map(|p| p.target.clone()).collect();
    let mut hyps = Vec::with_capacity(refs.len());
    for pair in &split.test {
        hyps.push(trainer.model.greedy_decode(&pair.source)?);
    }
    let iterations = plan.bootstrap_iterations;
    let bleu = bootstrap_ci(Metric::Bleu, &hyps, &refs, iterations, cell.replicate_seed)?;
    let chrfpp = bootstrap_ci(Metric::ChrfPp, &hyps, &refs, iterations, cell.replicate_seed)?;

    let manifest = RunManifest {
        experiment: plan.name.clone(),
        kind: plan.kind,
        condition: cell.condition.clone(),
        corpus_hash: split.corpus_hash.clone(),
        split_seed: plan.corpus.split_seed,
        splits: plan.corpus.splits,
        train_size: split.train.len(),
        ruleset_hash: ruleset_hash(&cell.rules),
        model: plan.model.clone(),
        train: config,
        replicate_seed: cell.replicate_seed,
        bootstrap_iterations: iterations,
    };
    let hash = manifest_hash(&manifest);

    Ok(ResultRow {
        experiment: plan.name.clone(),
        kind: plan.kind,
        condition: cell.condition,
        method: cell.method.to_string(),
        constraint_set: cell.constraint_set,
        train_size: split.train.len(),
        alpha: cell.alpha,
        k_min: cell.k_min,
        k_max: cell.k_max,
        replicate_seed: cell.replicate_seed,
        bleu,
        chrfpp,
        comet: "unavailable".to_string(),
        final_loss,
        val_positive_loss,
        realized_ratio,
        runtime_seconds: started.elapsed().as_secs_f64(),
        manifest_hash: hash,
        manifest,
    })
}

// ───────────────────────── experiments ─────────────────────────

fn expect_kind(plan: &ExperimentPlan, kind: ExperimentKind) -> Result<(), HarnessError> {
    if plan.kind == kind {
        Ok(())
    } else {
        Err(HarnessError::Plan(format!(
            "plan {:?} has kind {}, expected {}",
            plan.name, plan.kind, kind
        )))
    }
}

fn prepare(plan: &ExperimentPlan) -> Result<(SplitCorpus, RuleSet), HarnessError> {
    plan.validate()?;
    let pairs = plan.corpus.load_pairs()?;
    let [n_train, n_val, n_test] = plan.corpus.splits;
    let base = make_splits(&pairs, (n_train, n_val, n_test), plan.corpus.split_seed)?;
    let rules = plan.load_ruleset()?;
    Ok((base, rules))
}

/// Normal vs. NSL on identical splits and seeds; rows come out normal-first.
pub fn run_compare(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    expect_kind(plan, ExperimentKind::Compare)?;
    let (base, rules) = prepare(plan)?;
    let mut rows = Vec::new();
    for &seed in &plan.replicate_seeds {
        rows.push(run_cell(plan, &base, normal_cell(plan, &rules.language, seed, "normal"))?);
    }
    for &seed in &plan.replicate_seeds {
        rows.push(run_cell(plan, &base, nsl_cell(plan, &rules, seed, "nsl"))?);
    }
    Ok(rows)
}

/// Baseline, one condition per rule category, and the full rule set.
pub fn run_ablation(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    expect_kind(plan, ExperimentKind::Ablation)?;
    let (base, rules) = prepare(plan)?;
    for category in RuleCategory::ALL {
        if !rules.categories().contains(&category) {
            return Err(HarnessError::MissingCategory { category });
        }
    }
    let mut rows = Vec::new();
    for &seed in &plan.replicate_seeds {
        rows.push(run_cell(plan, &base, normal_cell(plan, &rules.language, seed, "baseline"))?);
    }
    for category in RuleCategory::ALL {
        let subset = rules.filter_by_category(&[category]);
        for &seed in &plan.replicate_seeds {
            let mut cell = nsl_cell(plan, &subset, seed, &format!("nsl-{category}"));
            cell.constraint_set = category.to_string();
            rows.push(run_cell(plan, &base, cell)?);
        }
    }
    for &seed in &plan.replicate_seeds {
        rows.push(run_cell(plan, &base, nsl_cell(plan, &rules, seed, "nsl-full"))?);
    }
    Ok(rows)
}

/// Both methods at each train size; sizes are nested subsamples and the full
/// train split is always included.
pub fn run_data_efficiency(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    expect_kind(plan, ExperimentKind::DataEfficiency)?;
    let (base, rules) = prepare(plan)?;
    let full = base.train.len();
    let mut sizes = plan.sweep.sizes.clone();
    for &size in &sizes {
        if size > full {
            return Err(HarnessError::Plan(format!(
                "size {size} exceeds the train split ({full})"
            )));
        }
    }
    if !sizes.contains(&full) {
        sizes.push(full);
    }
    let mut rows = Vec::new();
    for &size in &sizes {
        for &seed in &plan.replicate_seeds {
            let mut cell = normal_cell(plan, &rules.language, seed, &format!("normal@{size}"));
            cell.train_size = Some(size);
            rows.push(run_cell(plan, &base, cell)?);
        }
        for &seed in &plan.replicate_seeds {
            let mut cell = nsl_cell(plan, &rules, seed, &format!("nsl@{size}"));
            cell.train_size = Some(size);
            rows.push(run_cell(plan, &base, cell)?);
        }
    }
    Ok(rows)
}

/// Swept alphas in ascending order, preceded by the alpha = 0 control.
pub fn run_alpha_sweep(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    expect_kind(plan, ExperimentKind::AlphaSweep)?;
    let (base, rules) = prepare(plan)?;
    let mut alphas = plan.sweep.alphas.clone();
    alphas.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut rows = Vec::new();
    for &seed in &plan.replicate_seeds {
        rows.push(run_cell(plan, &base, normal_cell(plan, &rules.language, seed, "alpha=0"))?);
    }
    for &alpha in &alphas {
        for &seed in &plan.replicate_seeds {
            let mut cell = nsl_cell(plan, &rules, seed, &format!("alpha={alpha}"));
            cell.alpha = alpha;
            rows.push(run_cell(plan, &base, cell)?);
        }
    }
    Ok(rows)
}

/// One condition per violation-ratio label, in plan order.
pub fn run_ratio_sweep(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    expect_kind(plan, ExperimentKind::RatioSweep)?;
    let (base, rules) = prepare(plan)?;
    let mut rows = Vec::new();
    for label in &plan.sweep.ratios {
        let (k_min, k_max) = ratio_bounds(label)?;
        for &seed in &plan.replicate_seeds {
            let mut cell = nsl_cell(plan, &rules, seed, &format!("ratio={label}"));
            cell.k_min = k_min;
            cell.k_max = k_max;
            rows.push(run_cell(plan, &base, cell)?);
        }
    }
    Ok(rows)
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<ResultRow>, HarnessError> {
    match plan.kind {
        ExperimentKind::Compare => run_compare(plan),
        ExperimentKind::Ablation => run_ablation(plan),
        ExperimentKind::DataEfficiency => run_data_efficiency(plan),
        ExperimentKind::AlphaSweep => run_alpha_sweep(plan),
        ExperimentKind::RatioSweep => run_ratio_sweep(plan),
    }
}

// ───────────────────────── reports ─────────────────────────

fn grouped<'a, K, F>(rows: &'a [ResultRow], key: F) -> Vec<(K, Vec<&'a ResultRow>)>
where
    K: PartialEq,
    F: Fn(&ResultRow) -> K,
{
    let mut out: Vec<(K, Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        let k = key(row);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, members)) => members.push(row),
            None => out.push((k, vec![row])),
        }
    }
    out
}

fn mean<F: Fn(&ResultRow) -> f64>(rows: &[&ResultRow], f: F) -> f64 {
    rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
}

fn mean_sd<F: Fn(&ResultRow) -> f64>(rows: &[&ResultRow], f: F) -> (f64, f64) {
    let m = mean(rows, &f);
    if rows.len() < 2 {
        return (m, 0.0);
    }
    let var = rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (rows.len() - 1) as f64;
    (m, var.sqrt())
}

/// Human-readable findings derived from the rows; directional statements
/// are recorded, never enforced.
pub fn observations(rows: &[ResultRow]) -> Vec<String> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    match first.kind {
        ExperimentKind::Compare => {
            let normal: Vec<&ResultRow> = rows.iter().filter(|r| r.method == "normal").collect();
            let nsl: Vec<&ResultRow> = rows.iter().filter(|r| r.method == "nsl").collect();
            if normal.is_empty() || nsl.is_empty() {
                return out;
            }
            for (label, f) in metric_columns() {
                let a = mean(&normal, f);
                let b = mean(&nsl, f);
                let delta = b - a;
                let pct = if a != 0.0 { 100.0 * delta / a } else { f64::NAN };
                out.push(format!(
                    "{label}: normal {a:.4}, nsl {b:.4}, delta {delta:+.4} ({pct:+.2}%)"
                ));
            }
        }
        ExperimentKind::Ablation => {
            let by_condition = grouped(rows, |r| r.condition.clone());
            for (condition, members) in &by_condition {
                out.push(format!("{}: bleu {:.4}", condition, mean(members, |r| r.bleu.score)));
            }
            let score_of = |cond: &str| {
                by_condition
                    .iter()
                    .find(|(c, _)| c.as_str() == cond)
                    .map(|(_, m)| mean(m, |r| r.bleu.score))
            };
            let singles: Vec<f64> = RuleCategory::ALL
                .iter()
                .filter_map(|c| score_of(&format!("nsl-{c}")))
                .collect();
            if let (Some(full), Some(&best)) = (
                score_of("nsl-full"),
                singles.iter().max_by(|a, b| a.partial_cmp(b).unwrap()),
            ) {
                out.push(format!(
                    "full rule set vs best single category: {full:.4} vs {best:.4} ({})",
                    if full >= best { "full >= best" } else { "full < best" }
                ));
            }
        }
        ExperimentKind::DataEfficiency => {
            let normal_rows: Vec<ResultRow> =
                rows.iter().filter(|r| r.method == "normal").cloned().collect();
            let normal_by_size: Vec<(usize, f64)> = grouped(&normal_rows, |r| r.train_size)
                .into_iter()
                .map(|(size, members)| (size, mean(&members, |r| r.bleu.score)))
                .collect();
            let nsl_rows: Vec<ResultRow> =
                rows.iter().filter(|r| r.method == "nsl").cloned().collect();
            for (size, members) in grouped(&nsl_rows, |r| r.train_size) {
                let score = mean(&members, |r| r.bleu.score);
                let beaten = normal_by_size
                    .iter()
                    .filter(|(_, normal_score)| score >= *normal_score)
                    .map(|(s, _)| *s)
                    .max();
                match beaten {
                    Some(m) => out.push(format!(
                        "nsl@{size} bleu {score:.4} matches or beats normal up to size {m} (multiplier {:.2})",
                        m as f64 / size as f64
                    )),
                    None => out.push(format!(
                        "nsl@{size} bleu {score:.4} below normal at every size"
                    )),
                }
            }
        }
        ExperimentKind::AlphaSweep => {
            let nsl_rows: Vec<ResultRow> =
                rows.iter().filter(|r| r.method == "nsl").cloned().collect();
            let scores: Vec<(f64, f64)> = grouped(&nsl_rows, |r| r.alpha.to_bits())
                .into_iter()
                .map(|(bits, members)| {
                    (f64::from_bits(bits), mean(&members, |r| r.bleu.score))
                })
                .collect();
            if let (Some(min), Some(max)) = (
                scores.iter().map(|(_, s)| *s).min_by(|a, b| a.partial_cmp(b).unwrap()),
                scores.iter().map(|(_, s)| *s).max_by(|a, b| a.partial_cmp(b).unwrap()),
            ) {
                let best = scores
                    .iter()
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .expect("non-empty");
                out.push(format!(
                    "alpha sweep bleu range: {:.4} (best alpha={} at {:.4})",
                    max - min,
                    best.0,
                    best.1
                ));
            }
            let control: Vec<&ResultRow> = rows.iter().filter(|r| r.method == "normal").collect();
            if !control.is_empty() {
                let c = mean(&control, |r| r.bleu.score);
                let all_above = scores.iter().all(|(_, s)| *s > c);
                out.push(format!(
                    "alpha=0 control bleu {c:.4}; every swept alpha strictly better: {all_above}"
                ));
            }
        }
        ExperimentKind::RatioSweep => {
            let by_condition = grouped(rows, |r| r.condition.clone());
            let series: Vec<(String, f64)> = by_condition
                .iter()
                .map(|(c, members)| (c.clone(), mean(members, |r| r.bleu.score)))
                .collect();
            let monotone = series.windows(2).all(|w| w[0].1 <= w[1].1);
            let rendered: Vec<String> =
                series.iter().map(|(c, s)| format!("{c} bleu {s:.4}")).collect();
            out.push(format!(
                "{}; monotone nondecreasing in ratio: {monotone}",
                rendered.join(", ")
            ));
            let in_bounds = rows.iter().all(|r| {
                r.realized_ratio >= r.k_min as f64 && r.realized_ratio <= r.k_max as f64
            });
            out.push(format!(
                "realized negative:positive ratios within declared bounds: {in_bounds}"
            ));
        }
    }
    out
}

fn metric_columns() -> [(&'static str, fn(&ResultRow) -> f64); 2] {
    [
        ("bleu", |r: &ResultRow| r.bleu.score),
        ("chrfpp", |r: &ResultRow| r.chrfpp.score),
    ]
}

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub results_csv: PathBuf,
    pub results_json: PathBuf,
    pub figure_csv: PathBuf,
    pub manifest_files: Vec<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn make_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn opt_col(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULTS_CSV_HEADER: &str = "experiment,kind,condition,method,constraint_set,train_size,alpha,k_min,k_max,replicate_seed,bleu,bleu_ci_low,bleu_ci_high,bleu_ngram_cap,chrfpp,chrfpp_ci_low,chrfpp_ci_high,comet,final_total,final_l_pos,final_l_neg,val_positive_loss,realized_ratio,runtime_seconds,manifest_hash";

fn csv_line(row: &ResultRow) -> String {
    [
        row.experiment.clone(),
        row.kind.to_string(),
        row.condition.clone(),
        row.method.clone(),
        row.constraint_set.clone(),
        row.train_size.to_string(),
        row.alpha.to_string(),
        row.k_min.to_string(),
        row.k_max.to_string(),
        row.replicate_seed.to_string(),
        row.bleu.score.to_string(),
        opt_col(row.bleu.ci_low),
        opt_col(row.bleu.ci_high),
        row.bleu.ngram_cap.map(|c| c.to_string()).unwrap_or_default(),
        row.chrfpp.score.to_string(),
        opt_col(row.chrfpp.ci_low),
        opt_col(row.chrfpp.ci_high),
        row.comet.clone(),
        row.final_loss.total.to_string(),
        row.final_loss.l_pos.to_string(),
        row.final_loss.l_neg.to_string(),
        row.val_positive_loss.to_string(),
        row.realized_ratio.to_string(),
        row.runtime_seconds.to_string(),
        row.manifest_hash.clone(),
    ]
    .join(",")
}

fn figure_csv(rows: &[ResultRow]) -> String {
    let kind = rows[0].kind;
    let mut out = String::new();
    match kind {
        ExperimentKind::Compare => {
            out.push_str("metric,normal,nsl,delta,delta_pct\n");
            let normal: Vec<&ResultRow> = rows.iter().filter(|r| r.method == "normal").collect();
            let nsl: Vec<&ResultRow> = rows.iter().filter(|r| r.method == "nsl").collect();
            for (label, f) in metric_columns() {
                let a = mean(&normal, f);
                let b = mean(&nsl, f);
                let pct = if a != 0.0 { 100.0 * (b - a) / a } else { f64::NAN };
                out.push_str(&format!("{label},{a},{b},{},{pct}\n", b - a));
            }
        }
        ExperimentKind::Ablation => {
            out.push_str("condition,bleu,bleu_sd,chrfpp,chrfpp_sd\n");
            for (condition, members) in grouped(rows, |r| r.condition.clone()) {
                let (b, b_sd) = mean_sd(&members, |r| r.bleu.score);
                let (c, c_sd) = mean_sd(&members, |r| r.chrfpp.score);
                out.push_str(&format!("{condition},{b},{b_sd},{c},{c_sd}\n"));
            }
        }
        ExperimentKind::DataEfficiency => {
            out.push_str(
                "size,method,bleu,bleu_ci_low,bleu_ci_high,chrfpp,chrfpp_ci_low,chrfpp_ci_high\n",
            );
            for ((size, method), members) in
                grouped(rows, |r| (r.train_size, r.method.clone()))
            {
                out.push_str(&format!(
                    "{size},{method},{},{},{},{},{},{}\n",
                    mean(&members, |r| r.bleu.score),
                    mean(&members, |r| r.bleu.ci_low.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.bleu.ci_high.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.chrfpp.score),
                    mean(&members, |r| r.chrfpp.ci_low.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.chrfpp.ci_high.unwrap_or(f64::NAN)),
                ));
            }
        }
        ExperimentKind::AlphaSweep => {
            out.push_str(
                "alpha,method,bleu,bleu_ci_low,bleu_ci_high,chrfpp,chrfpp_ci_low,chrfpp_ci_high\n",
            );
            for ((alpha_bits, method), members) in
                grouped(rows, |r| (r.alpha.to_bits(), r.method.clone()))
            {
                out.push_str(&format!(
                    "{},{method},{},{},{},{},{},{}\n",
                    f64::from_bits(alpha_bits),
                    mean(&members, |r| r.bleu.score),
                    mean(&members, |r| r.bleu.ci_low.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.bleu.ci_high.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.chrfpp.score),
                    mean(&members, |r| r.chrfpp.ci_low.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.chrfpp.ci_high.unwrap_or(f64::NAN)),
                ));
            }
        }
        ExperimentKind::RatioSweep => {
            out.push_str("ratio,k_min,k_max,realized_ratio,bleu,bleu_ci_low,bleu_ci_high,chrfpp\n");
            for (condition, members) in grouped(rows, |r| r.condition.clone()) {
                let label = condition.trim_start_matches("ratio=");
                out.push_str(&format!(
                    "{label},{},{},{},{},{},{},{}\n",
                    members[0].k_min,
                    members[0].k_max,
                    mean(&members, |r| r.realized_ratio),
                    mean(&members, |r| r.bleu.score),
                    mean(&members, |r| r.bleu.ci_low.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.bleu.ci_high.unwrap_or(f64::NAN)),
                    mean(&members, |r| r.chrfpp.score),
                ));
            }
        }
    }
    out
}

/// Writes `results.csv`, `results.json`, `figures/<kind>.csv`, and one
/// manifest file per distinct cell. Pure function of the rows: rerunning it
/// on the same rows reproduces byte-identical files.
pub fn emit_report(rows: &[ResultRow], out_dir: &Path) -> Result<ReportPaths, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Plan("no result rows to report".into()));
    }
    make_dir(out_dir)?;
    make_dir(&out_dir.join("figures"))?;
    make_dir(&out_dir.join("manifests"))?;

    let results_csv = out_dir.join("results.csv");
    let mut csv = String::from(RESULTS_CSV_HEADER);
    csv.push('\n');
    for row in rows {
        csv.push_str(&csv_line(row));
        csv.push('\n');
    }
    write_file(&results_csv, csv.as_bytes())?;

    #[derive(Serialize)]
    struct Results<'a> {
        experiment: &'a str,
        kind: ExperimentKind,
        observations: Vec<String>,
        rows: &'a [ResultRow],
    }
    let results_json = out_dir.join("results.json");
    let doc = Results {
        experiment: &rows[0].experiment,
        kind: rows[0].kind,
        observations: observations(rows),
        rows,
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("rows serialize");
    json.push('\n');
    write_file(&results_json, json.as_bytes())?;

    let figure_csv_path = out_dir.join("figures").join(format!("{}.csv", rows[0].kind.name()));
    write_file(&figure_csv_path, figure_csv(rows).as_bytes())?;

    let mut manifest_files = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    for row in rows {
        seen.entry(row.manifest_hash.clone()).or_insert(&row.manifest);
    }
    for (hash, manifest) in seen {
        let path = out_dir.join("manifests").join(format!("{hash}.json"));
        let mut body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        body.push('\n');
        write_file(&path, body.as_bytes())?;
        manifest_files.push(path);
    }

    Ok(ReportPaths {
        results_csv,
        results_json,
        figure_csv: figure_csv_path,
        manifest_files,
    })
}

/// Runs the plan and writes its report. Returns the rows and where they
/// were written.
pub fn run_and_report(
    plan: &ExperimentPlan,
    out_dir: &Path,
) -> Result<(Vec<ResultRow>, ReportPaths), HarnessError> {
    let rows = run_experiment(plan)?;
    let paths = emit_report(&rows, out_dir)?;
    Ok((rows, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn tiny_plan(name: &str, kind: ExperimentKind) -> ExperimentPlan {
        ExperimentPlan {
            name: name.to_string(),
            kind,
            corpus: CorpusPlan {
                path: None,
                format: None,
                toy: Some(ToyPlan { size: 32, seed: 5 }),
                splits: [20, 6, 6],
                split_seed: 1,
            },
            model: ModelConfig {
                d_model: 16,
                n_heads: 2,
                n_encoder_layers: 1,
                n_decoder_layers: 1,
                d_ff: 32,
                max_len: 16,
            },
            train: TrainConfig {
                epochs: 1,
                batch_size: 10,
                lr: 1e-3,
                warmup_steps: 2,
                alpha: 0.7,
                k_min: 2,
                k_max: 3,
                ..Default::default()
            },
            ruleset: "toy".to_string(),
            sweep: SweepValues::default(),
            replicate_seeds: vec![0],
            bootstrap_iterations: 10,
        }
    }

    #[test]
    fn builtin_plans_parse_validate_and_match_their_names() {
        let names = builtin_plan_names();
        assert_eq!(
            names,
            vec!["compare", "ablation", "data-efficiency", "alpha-sweep", "ratio-sweep"]
        );
        for name in names {
            let plan = builtin_plan(name).unwrap();
            assert_eq!(plan.name, name, "plan file name mismatch");
        }
        assert_eq!(builtin_plan("compare").unwrap().kind, ExperimentKind::Compare);
        assert_eq!(builtin_plan("ablation").unwrap().kind, ExperimentKind::Ablation);
        assert_eq!(
            builtin_plan("data-efficiency").unwrap().kind,
            ExperimentKind::DataEfficiency
        );
        assert_eq!(builtin_plan("alpha-sweep").unwrap().kind, ExperimentKind::AlphaSweep);
        assert_eq!(builtin_plan("ratio-sweep").unwrap().kind, ExperimentKind::RatioSweep);
        assert!(matches!(builtin_plan("nope"), Err(HarnessError::UnknownPlan(_))));
    }

    #[test]
    fn ratio_labels_map_to_declared_violation_counts() {
        assert_eq!(ratio_bounds("2:1").unwrap(), (1, 2));
        assert_eq!(ratio_bounds("4:1").unwrap(), (3, 5));
        assert_eq!(ratio_bounds("6:1").unwrap(), (5, 7));
        assert!(matches!(ratio_bounds("3:1"), Err(HarnessError::Plan(_))));
    }

    #[test]
    fn plan_validation_rejects_structural_mistakes() {
        let mut plan = tiny_plan("bad", ExperimentKind::Compare);
        plan.replicate_seeds = vec![1, 1];
        assert!(matches!(plan.validate(), Err(HarnessError::Plan(_))));

        let mut plan = tiny_plan("bad", ExperimentKind::AlphaSweep);
        plan.sweep.alphas = vec![];
        assert!(plan.validate().is_err());
        plan.sweep.alphas = vec![0.0];
        assert!(plan.validate().is_err(), "alpha=0 may not be swept");
        plan.sweep.alphas = vec![0.3, 0.3];
        assert!(plan.validate().is_err(), "duplicate alphas");

        let mut plan = tiny_plan("bad", ExperimentKind::RatioSweep);
        plan.sweep.ratios = vec!["9:1".into()];
        assert!(plan.validate().is_err());

        let mut plan = tiny_plan("bad", ExperimentKind::DataEfficiency);
        plan.sweep.sizes = vec![16, 8];
        assert!(plan.validate().is_err(), "sizes must ascend");

        let mut plan = tiny_plan("bad", ExperimentKind::Compare);
        plan.corpus.path = Some(PathBuf::from("x.tsv"));
        assert!(plan.validate().is_err(), "path and toy are exclusive");

        let mut plan = tiny_plan("bad name", ExperimentKind::Compare);
        plan.name = "bad name".into();
        assert!(plan.validate().is_err(), "names cannot contain spaces");

        let mut plan = tiny_plan("bad", ExperimentKind::Compare);
        plan.bootstrap_iterations = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn compare_runs_two_controlled_conditions() {
        let plan = tiny_plan("tiny-compare", ExperimentKind::Compare);
        let rows = run_compare(&plan).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].condition, "normal");
        assert_eq!(rows[1].condition, "nsl");

        let normal = &rows[0];
        assert_eq!(normal.method, "normal");
        assert_eq!(normal.constraint_set, "none");
        assert_eq!(normal.alpha, 0.0);
        assert_eq!(normal.final_loss.l_neg, 0.0, "baseline sees no negatives");
        assert_eq!(normal.realized_ratio, 0.0);

        let nsl = &rows[1];
        assert_eq!(nsl.method, "nsl");
        assert_eq!(nsl.alpha, 0.7);
        assert!(
            nsl.realized_ratio >= nsl.k_min as f64 && nsl.realized_ratio <= nsl.k_max as f64,
            "realized ratio {} outside [{}, {}]",
            nsl.realized_ratio,
            nsl.k_min,
            nsl.k_max
        );

        assert_eq!(normal.manifest.corpus_hash, nsl.manifest.corpus_hash);
        assert_eq!(normal.manifest.split_seed, nsl.manifest.split_seed);
        assert_eq!(normal.manifest.replicate_seed, nsl.manifest.replicate_seed);
        assert_ne!(normal.manifest_hash, nsl.manifest_hash);
        for row in &rows {
            assert_eq!(row.comet, "unavailable");
            assert_eq!(row.manifest_hash, manifest_hash(&row.manifest));
            assert_eq!(row.bleu.n_segments, 6);
            assert_eq!(row.train_size, 20);
            assert!(row.runtime_seconds > 0.0);
        }
    }

    #[test]
    fn emit_report_is_deterministic_and_stores_manifests() {
        let plan = tiny_plan("tiny-compare", ExperimentKind::Compare);
        let rows = run_compare(&plan).unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let paths1 = emit_report(&rows, dir1.path()).unwrap();
        let paths2 = emit_report(&rows, dir2.path()).unwrap();

        for (a, b) in [
            (&paths1.results_csv, &paths2.results_csv),
            (&paths1.results_json, &paths2.results_json),
            (&paths1.figure_csv, &paths2.figure_csv),
        ] {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{a:?} differs");
        }

        let csv = fs::read_to_string(&paths1.results_csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_CSV_HEADER);
        assert_eq!(lines.count(), 2, "one line per row");

        let figure = fs::read_to_string(&paths1.figure_csv).unwrap();
        assert!(paths1.figure_csv.ends_with("figures/compare.csv"));
        let mut lines = figure.lines();
        assert_eq!(lines.next().unwrap(), "metric,normal,nsl,delta,delta_pct");
        assert_eq!(lines.count(), 2, "bleu and chrfpp rows");

        assert_eq!(paths1.manifest_files.len(), 2);
        for row in &rows {
            let path = dir1
                .path()
                .join("manifests")
                .join(format!("{}.json", row.manifest_hash));
            let stored: RunManifest =
                serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(stored, row.manifest, "stored manifest resolves the row");
        }

        let parsed: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&paths1.results_json).unwrap()).unwrap();
        assert_eq!(parsed["experiment"], "tiny-compare");
        assert_eq!(parsed["rows"].as_array().unwrap().len(), 2);
        assert!(parsed["observations"].as_array().unwrap().len() >= 2);
    }

    #[test]
    fn ablation_emits_the_five_table_rows() {
        let mut plan = tiny_plan("tiny-ablation", ExperimentKind::Ablation);
        plan.corpus.toy = Some(ToyPlan { size: 24, seed: 6 });
        plan.corpus.splits = [14, 5, 5];
        let rows = run_ablation(&plan).unwrap();
        let conditions: Vec<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
        assert_eq!(
            conditions,
            vec!["baseline", "nsl-morphological", "nsl-syntactic", "nsl-lexical", "nsl-full"]
        );
        let constraint_sets: Vec<&str> =
            rows.iter().map(|r| r.constraint_set.as_str()).collect();
        assert_eq!(
            constraint_sets,
            vec!["none", "morphological", "syntactic", "lexical", "full"]
        );
        let hashes: std::collections::BTreeSet<&str> =
            rows.iter().map(|r| r.manifest.ruleset_hash.as_str()).collect();
        assert_eq!(hashes.len(), 5, "each condition trains on a distinct rule set");
        for row in &rows {
            assert_eq!(row.manifest.corpus_hash, rows[0].manifest.corpus_hash);
        }
    }

    #[test]
    fn ablation_requires_all_three_categories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mono.rules.toml");
        let mut file = fs::File::create(&path).unwrap();
        write!(
            file,
            r#"
language = "mini"

[token_classes]
noun_pl = ["musa-yan"]

[[rules]]
rule_id = "morph-plural-drop"
category = "morphological"
severity = 1.0
match = "CLASS:noun_pl"
rewrite = "$1/-yan/"
description = "strip the plural suffix"
"#
        )
        .unwrap();
        let mut plan = tiny_plan("tiny-ablation", ExperimentKind::Ablation);
        plan.ruleset = path.display().to_string();
        match run_ablation(&plan) {
            Err(HarnessError::MissingCategory { category }) => {
                assert_ne!(category, RuleCategory::Morphological);
            }
            other => panic!("expected MissingCategory, got {other:?}"),
        }
    }

    #[test]
    fn full_ruleset_is_the_union_of_the_single_categories() {
        let rules = RuleSet::toy();
        let mut union: Vec<String> = Vec::new();
        for category in RuleCategory::ALL {
            let subset = rules.filter_by_category(&[category]);
            union.extend(subset.rules.iter().map(|r| r.rule_id.clone()));
        }
        union.sort();
        let mut all: Vec<String> = rules.rules.iter().map(|r| r.rule_id.clone()).collect();
        all.sort();
        assert_eq!(union, all, "categories partition the rule set");
    }

    #[test]
    fn data_efficiency_builds_the_size_grid() {
        let mut plan = tiny_plan("tiny-eff", ExperimentKind::DataEfficiency);
        plan.sweep.sizes = vec![8, 14];
        let rows = run_data_efficiency(&plan).unwrap();
        let grid: Vec<(usize, &str)> =
            rows.iter().map(|r| (r.train_size, r.method.as_str())).collect();
        assert_eq!(
            grid,
            vec![
                (8, "normal"),
                (8, "nsl"),
                (14, "normal"),
                (14, "nsl"),
                (20, "normal"),
                (20, "nsl"),
            ],
            "sizes ascending, both methods each, full size appended"
        );
        assert_eq!(rows[0].condition, "normal@8");
        assert_eq!(rows[3].condition, "nsl@14");

        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&rows, dir.path()).unwrap();
        let figure = fs::read_to_string(&paths.figure_csv).unwrap();
        assert_eq!(
            figure.lines().next().unwrap(),
            "size,method,bleu,bleu_ci_low,bleu_ci_high,chrfpp,chrfpp_ci_low,chrfpp_ci_high"
        );
        assert_eq!(figure.lines().count(), 7);

        plan.sweep.sizes = vec![8, 200];
        let err = run_data_efficiency(&plan).unwrap_err();
        assert!(matches!(err, HarnessError::Plan(m) if m.contains("exceeds")));
    }

    #[test]
    fn alpha_sweep_prepends_a_control_and_varies_only_alpha() {
        let mut plan = tiny_plan("tiny-alpha", ExperimentKind::AlphaSweep);
        plan.sweep.alphas = vec![0.7, 0.3];
        let rows = run_alpha_sweep(&plan).unwrap();
        let conditions: Vec<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
        assert_eq!(conditions, vec!["alpha=0", "alpha=0.3", "alpha=0.7"]);
        assert_eq!(rows[0].method, "normal");
        assert_eq!(rows[0].alpha, 0.0);

        let toy_hash = ruleset_hash(&RuleSet::toy());
        let empty_hash = ruleset_hash(&RuleSet::empty(&RuleSet::toy().language));
        assert_eq!(rows[0].manifest.ruleset_hash, empty_hash);
        for row in &rows[1..] {
            assert_eq!(row.manifest.ruleset_hash, toy_hash);
            let mut neutral = row.manifest.train.clone();
            neutral.alpha = 0.0;
            let mut base = rows[1].manifest.train.clone();
            base.alpha = 0.0;
            assert_eq!(neutral, base, "swept cells differ only in alpha");
        }
    }

    #[test]
    fn ratio_sweep_maps_labels_and_records_the_ordering() {
        let mut plan = tiny_plan("tiny-ratio", ExperimentKind::RatioSweep);
        plan.sweep.ratios = vec!["2:1".into(), "4:1".into()];
        let rows = run_ratio_sweep(&plan).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].k_min, rows[0].k_max), (1, 2));
        assert_eq!((rows[1].k_min, rows[1].k_max), (3, 5));
        for row in &rows {
            assert!(
                row.realized_ratio >= row.k_min as f64 && row.realized_ratio <= row.k_max as f64,
                "{} outside [{}, {}]",
                row.realized_ratio,
                row.k_min,
                row.k_max
            );
        }
        let notes = observations(&rows);
        assert!(notes.iter().any(|n| n.contains("monotone")), "{notes:?}");
        assert!(
            notes.iter().any(|n| n.contains("within declared bounds: true")),
            "{notes:?}"
        );
    }

    #[test]
    fn mismatched_kind_is_rejected() {
        let plan = tiny_plan("tiny-compare", ExperimentKind::Compare);
        assert!(matches!(run_ablation(&plan), Err(HarnessError::Plan(_))));
    }
}
