//! Training loop for the mixed-batch objective.
//!
//! Each epoch shuffles the train split, regenerates every pair's violations
//! from a stream keyed by `(seed, epoch, pair id)`, and steps AdamW with
//! linear learning-rate warmup and global-norm gradient clipping. All
//! randomness comes from counter-derived streams, so a run is a pure
//! function of `(corpus, rules, config, init seed)`: rerunning reproduces
//! the log byte-for-byte, and resuming from a checkpoint replays the exact
//! remaining schedule without serializing generator state.
//!
//! The log is JSON lines: one [`LossReport`] per step interleaved with one
//! `{epoch, val_positive_loss}` record per epoch.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SplitCorpus;
use crate::loss::{nsl_loss, LossError, LossReport, MixedBatch, NegativeExample, PenaltyForm};
use crate::model::{ModelError, Seq2SeqModel, Tokenizer};
use crate::rng::{hash_str, purpose, stream};
use crate::rules::{ruleset_hash, RuleError, RuleSet};
use crate::tensor::{Tape, Tensor};

pub const TRAIN_CHECKPOINT_MAGIC: &str = "nsl-mt-train";
pub const TRAIN_CHECKPOINT_VERSION: u32 = 1;
const MODEL_FILE: &str = "model.json";
const TRAINER_FILE: &str = "trainer.json";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write the run log: {0}")]
    Log(std::io::Error),
    #[error("bad train checkpoint: {0}")]
    Checkpoint(String),
    #[error("the split's vocabulary does not match the model's tokenizer")]
    VocabularyMismatch,
    #[error("corpus changed since the checkpoint (expected hash {expected}, got {found})")]
    CorpusMismatch { expected: String, found: String },
    #[error("ruleset changed since the checkpoint (expected hash {expected}, got {found})")]
    RulesetMismatch { expected: String, found: String },
}

// ───────────────────────── configuration ─────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Positive pairs per batch; violations come on top of these.
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub alpha: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub penalty: PenaltyForm,
    pub weight_decay: f64,
    /// Learning rate at the final step as a fraction of `lr`; the rate
    /// decays linearly from the end of warmup. 1.0 keeps it constant.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 2e-5,
            warmup_steps: 500,
            clip_norm: 1.0,
            alpha: 0.7,
            k_min: 3,
            k_max: 5,
            penalty: PenaltyForm::Unlikelihood,
            weight_decay: 0.01,
            final_lr_fraction: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !self.clip_norm.is_finite() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.k_min < 1 || self.k_min > self.k_max {
            return bad(format!(
                "violation range [{}, {}] needs 1 <= k_min <= k_max",
                self.k_min, self.k_max
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            ));
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return bad(format!(
                "final_lr_fraction must lie in [0, 1], got {}",
                self.final_lr_fraction
            ));
        }
        Ok(())
    }
}

/// Linear warmup to `lr` over `warmup` steps, then linear decay so that
/// step `total` runs at `lr * final_fraction`. `step` is 1-based (the
/// first update is step 1); `final_fraction = 1.0` keeps the rate flat
/// after warmup.
pub fn lr_at(lr: f64, warmup: u64, step: u64, total: u64, final_fraction: f64) -> f64 {
    if warmup > 0 && step < warmup {
        return lr * step as f64 / warmup as f64;
    }
    if final_fraction >= 1.0 || total <= warmup {
        return lr;
    }
    let span = (total - warmup) as f64;
    let into = (step.min(total) - warmup) as f64;
    lr * (1.0 - (1.0 - final_fraction) * into / span)
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm; an all-zero gradient is left untouched.
pub fn clip_gradients(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in params.iter() {
        if let Some(g) = &p.grad {
            for &x in g {
                sq += x * x;
            }
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = &mut p.grad {
                for x in g {
                    *x *= scale;
                }
            }
        }
    }
    norm
}

// ───────────────────────── optimizer ─────────────────────────

/// AdamW with decoupled weight decay applied uniformly to every parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: &TrainConfig, param_sizes: &[usize]) -> AdamW {
        AdamW {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One update with step size `lr_t`. Parameters without a gradient
    /// buffer still decay their moments and weights.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr_t: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let zero = Vec::new();
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad.as_ref().unwrap_or(&zero);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.data.len() {
                let gj = g.get(j).copied().unwrap_or(0.0);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -=
                    lr_t * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p.data[j]);
            }
        }
    }
}

// ───────────────────────── log records ─────────────────────────

/// One line of the JSON-lines run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(LossReport),
    Epoch { epoch: usize, val_positive_loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub global_step: u64,
    pub val_positive_loss_per_epoch: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    magic: String,
    version: u32,
    config: TrainConfig,
    global_step: u64,
    optimizer: AdamW,
    ruleset_hash: String,
    corpus_hash: Option<String>,
    n_train: Option<usize>,
    subsampled_to: Option<usize>,
}

// ───────────────────────── trainer ─────────────────────────

#[derive(Debug)]
pub struct Trainer {
    pub model: Seq2SeqModel,
    pub config: TrainConfig,
    pub rules: RuleSet,
    optimizer: AdamW,
    global_step: u64,
    corpus_hash: Option<String>,
    n_train: Option<usize>,
    subsampled_to: Option<usize>,
}

impl Trainer {
    pub fn new(
        model: Seq2SeqModel,
        rules: RuleSet,
        config: TrainConfig,
    ) -> Result<Trainer, TrainError> {
        config.validate()?;
        let sizes: Vec<usize> = model.parameters().iter().map(|p| p.numel()).collect();
        let optimizer = AdamW::new(&config, &sizes);
        Ok(Trainer {
            model,
            config,
            rules,
            optimizer,
            global_step: 0,
            corpus_hash: None,
            n_train: None,
            subsampled_to: None,
        })
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    fn steps_per_epoch(&self, n_train: usize) -> u64 {
        n_train.div_ceil(self.config.batch_size) as u64
    }

    fn bind_corpus(&mut self, split: &SplitCorpus) -> Result<(), TrainError> {
        let found = split.corpus_hash.clone();
        match &self.corpus_hash {
            None => {
                self.corpus_hash = Some(found);
                self.n_train = Some(split.train.len());
                self.subsampled_to = split.subsampled_to;
            }
            Some(expected) => {
                if *expected != found
                    || self.n_train != Some(split.train.len())
                    || self.subsampled_to != split.subsampled_to
                {
                    return Err(TrainError::CorpusMismatch {
                        expected: expected.clone(),
                        found,
                    });
                }
            }
        }
        if Tokenizer::from_pairs(&split.train) != self.model.tokenizer {
            return Err(TrainError::VocabularyMismatch);
        }
        Ok(())
    }

    /// Mean over pairs of the per-sentence token-mean negative
    /// log-likelihood, the same normalization the training objective uses.
    pub fn mean_positive_loss(
        &self,
        pairs: &[crate::corpus::ParallelPair],
    ) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for pair in pairs {
            let lps = self.model.per_token_log_probs(&pair.source, &pair.target)?;
            total -= lps.iter().sum::<f64>() / lps.len() as f64;
        }
        Ok(total / pairs.len().max(1) as f64)
    }

    /// Trains until `config.epochs` epochs have been completed, starting from
    /// the current global step (so a resumed trainer replays only the
    /// remaining schedule). Writes one JSON line per step and per epoch.
    pub fn run(
        &mut self,
        split: &SplitCorpus,
        log: &mut dyn Write,
    ) -> Result<TrainSummary, TrainError> {
        if split.train.is_empty() {
            return Err(TrainError::Config("the train split is empty".into()));
        }
        self.bind_corpus(split)?;
        let seed = self.config.seed;
        let spe = self.steps_per_epoch(split.train.len());
        let start_epoch = (self.global_step / spe) as usize;
        let mut val_losses = Vec::new();

        for epoch in start_epoch..self.config.epochs {
            let mut order: Vec<usize> = (0..split.train.len()).collect();
            order.shuffle(&mut stream(seed, &[purpose::EPOCH_ORDER, epoch as u64]));
            let skip = if epoch as u64 == self.global_step / spe {
                (self.global_step % spe) as usize
            } else {
                0
            };
            for (batch_idx, chunk) in order.chunks(self.config.batch_size).enumerate() {
                if batch_idx < skip {
                    continue;
                }
                let positives: Vec<_> =
                    chunk.iter().map(|&i| split.train[i].clone()).collect();
                let mut negatives = Vec::new();
                for pair in &positives {
                    let mut vrng = stream(
                        seed,
                        &[purpose::VIOLATIONS, epoch as u64, hash_str(&pair.id)],
                    );
                    for violation in self.rules.generate_violations(
                        pair,
                        self.config.k_min,
                        self.config.k_max,
                        &mut vrng,
                    )? {
                        negatives.push(NegativeExample {
                            source: pair.source.clone(),
                            violation,
                        });
                    }
                }
                let mut brng = stream(
                    seed,
                    &[purpose::BATCH_SHUFFLE, epoch as u64, batch_idx as u64],
                );
                let batch = MixedBatch::new(positives, negatives, &mut brng);

                let mut tape = Tape::new();
                let mut graph = crate::loss::GraphModel::new(&self.model, &mut tape);
                let ids = nsl_loss(
                    &mut graph,
                    &mut tape,
                    &batch,
                    self.config.alpha,
                    self.config.penalty,
                )?;
                tape.backward(ids.total).map_err(LossError::Tensor)?;
                let params = graph.params().clone();
                self.model.pull_grads(&tape, &params);

                {
                    let mut prefs = self.model.parameters_mut();
                    clip_gradients(&mut prefs, self.config.clip_norm);
                    let step_lr = lr_at(
                        self.config.lr,
                        self.config.warmup_steps,
                        self.global_step + 1,
                        spe * self.config.epochs as u64,
                        self.config.final_lr_fraction,
                    );
                    self.optimizer.step(&mut prefs, step_lr);
                }
                self.model.zero_grads();
                self.global_step += 1;

                let report = ids.report(&tape, self.global_step, self.config.alpha, &batch);
                writeln!(
                    log,
                    "{}",
                    serde_json::to_string(&LogRecord::Step(report)).expect("report serializes")
                )
                .map_err(TrainError::Log)?;
            }

            let val_positive_loss = if split.val.is_empty() {
                f64::NAN
            } else {
                self.mean_positive_loss(&split.val)?
            };
            val_losses.push(val_positive_loss);
            writeln!(
                log,
                "{}",
                serde_json::to_string(&LogRecord::Epoch {
                    epoch,
                    val_positive_loss
                })
                .expect("epoch record serializes")
            )
            .map_err(TrainError::Log)?;
        }

        Ok(TrainSummary {
            global_step: self.global_step,
            val_positive_loss_per_epoch: val_losses,
        })
    }

    // ───────────────────────── checkpoints ─────────────────────────

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        self.model.save(&dir.join(MODEL_FILE))?;
        let state = TrainerState {
            magic: TRAIN_CHECKPOINT_MAGIC.into(),
            version: TRAIN_CHECKPOINT_VERSION,
            config: self.config.clone(),
            global_step: self.global_step,
            optimizer: self.optimizer.clone(),
            ruleset_hash: ruleset_hash(&self.rules),
            corpus_hash: self.corpus_hash.clone(),
            n_train: self.n_train,
            subsampled_to: self.subsampled_to,
        };
        let path = dir.join(TRAINER_FILE);
        let json = serde_json::to_string(&state).expect("state serializes");
        fs::write(&path, json).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Restores a trainer from `dir`, checking that the supplied split and
    /// rules are the ones the checkpoint was trained with.
    pub fn resume(
        dir: &Path,
        split: &SplitCorpus,
        rules: RuleSet,
    ) -> Result<Trainer, TrainError> {
        let path = dir.join(TRAINER_FILE);
        let text = fs::read_to_string(&path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let state: TrainerState = serde_json::from_str(&text)
            .map_err(|e| TrainError::Checkpoint(format!("unreadable json: {e}")))?;
        if state.magic != TRAIN_CHECKPOINT_MAGIC {
            return Err(TrainError::Checkpoint(format!(
                "magic \"{}\" is not \"{TRAIN_CHECKPOINT_MAGIC}\"",
                state.magic
            )));
        }
        if state.version != TRAIN_CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported version {} (expected {TRAIN_CHECKPOINT_VERSION})",
                state.version
            )));
        }
        state.config.validate()?;
        let found_rules = ruleset_hash(&rules);
        if state.ruleset_hash != found_rules {
            return Err(TrainError::RulesetMismatch {
                expected: state.ruleset_hash,
                found: found_rules,
            });
        }
        let model = Seq2SeqModel::load(&dir.join(MODEL_FILE))?;
        if Tokenizer::from_pairs(&split.train) != model.tokenizer {
            return Err(TrainError::VocabularyMismatch);
        }
        if let Some(expected) = &state.corpus_hash {
            if *expected != split.corpus_hash
                || state.n_train != Some(split.train.len())
                || state.subsampled_to != split.subsampled_to
            {
                return Err(TrainError::CorpusMismatch {
                    expected: expected.clone(),
                    found: split.corpus_hash.clone(),
                });
            }
        }
        let sizes: Vec<usize> = model.parameters().iter().map(|p| p.numel()).collect();
        if state.optimizer.m.len() != sizes.len()
            || state
                .optimizer
                .m
                .iter()
                .zip(&sizes)
                .any(|(m, &n)| m.len() != n)
        {
            return Err(TrainError::Checkpoint(
                "optimizer state does not match the model's parameters".into(),
            ));
        }
        Ok(Trainer {
            model,
            config: state.config,
            rules,
            optimizer: state.optimizer,
            global_step: state.global_step,
            corpus_hash: state.corpus_hash,
            n_train: state.n_train,
            subsampled_to: state.subsampled_to,
        })
    }
}
