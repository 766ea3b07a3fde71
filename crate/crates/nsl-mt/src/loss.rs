//! The negative-space training objective.
//!
//! A mixed batch holds positive pairs and severity-weighted violations. The
//! objective is
//!
//! ```text
//! L = L_pos + alpha * L_neg
//! L_pos = -(1/|P|) sum_i log P(y_i | x_i)
//! L_neg =  (1/|N|) sum_j s_j * penalty(v_j | x_j)
//! ```
//!
//! where the penalty is either the bounded per-token unlikelihood
//! `sum_t -log(1 - p_t)` ([`PenaltyForm::Unlikelihood`], the default) or the
//! raw severity-weighted log-likelihood `sum_t log p_t`
//! ([`PenaltyForm::Literal`]), which minimization drives down without a
//! lower bound.
//!
//! Scoring goes through the [`ScoreGraph`] trait so the losses can be tested
//! against hand-built probability tables as well as the real model.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParallelPair;
use crate::model::{GraphParams, ModelError, Seq2SeqModel};
use crate::rules::ViolationRecord;
use crate::tensor::{Tape, TensorError, TensorId};

/// Floor on `1 - p` inside the unlikelihood penalty; keeps the loss finite
/// (at most `-ln(1e-12) ≈ 27.6` per token) when the model is confidently
/// wrong.
pub const UNLIKELIHOOD_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("a mixed batch needs at least one positive pair")]
    EmptyPositives,
    #[error("alpha must be finite and non-negative, got {0}")]
    BadAlpha(f64),
    #[error("violation severity {severity} is outside [0, 1]")]
    BadSeverity { severity: f64 },
}

/// Anything that can score `log P(text | source)` token-by-token on a tape.
pub trait ScoreGraph {
    /// Graph node holding per-token log-probabilities of `text` given
    /// `source`, including the end-of-sequence step.
    fn per_token_logprobs(
        &mut self,
        tape: &mut Tape,
        source: &str,
        text: &str,
    ) -> Result<TensorId, LossError>;

    /// Like [`Self::per_token_logprobs`] but covering only the words of
    /// `text`, without the end-of-sequence step. Penalties use this scope:
    /// a violation is the corrupted sentence itself, and punishing the
    /// terminator after a mostly-correct prefix teaches the model never to
    /// stop.
    fn content_logprobs(
        &mut self,
        tape: &mut Tape,
        source: &str,
        text: &str,
    ) -> Result<TensorId, LossError>;
}

/// [`ScoreGraph`] over a real model: leases the parameters once and caches
/// the encoder memory per distinct source, so positives and their violations
/// share one encoder subgraph.
pub struct GraphModel<'m> {
    model: &'m Seq2SeqModel,
    params: GraphParams,
    memories: HashMap<String, TensorId>,
}

impl<'m> GraphModel<'m> {
    pub fn new(model: &'m Seq2SeqModel, tape: &mut Tape) -> GraphModel<'m> {
        let params = model.lease(tape);
        GraphModel {
            model,
            params,
            memories: HashMap::new(),
        }
    }

    pub fn params(&self) -> &GraphParams {
        &self.params
    }

    /// Number of distinct sources encoded so far.
    pub fn cached_sources(&self) -> usize {
        self.memories.len()
    }
}

impl GraphModel<'_> {
    fn memory_for(&mut self, tape: &mut Tape, source: &str) -> Result<TensorId, LossError> {
        if let Some(&m) = self.memories.get(source) {
            return Ok(m);
        }
        let ids = self.model.tokenizer.encode(source);
        let m = self.model.encode(tape, &self.params, &ids)?;
        self.memories.insert(source.to_string(), m);
        Ok(m)
    }
}

impl ScoreGraph for GraphModel<'_> {
    fn per_token_logprobs(
        &mut self,
        tape: &mut Tape,
        source: &str,
        text: &str,
    ) -> Result<TensorId, LossError> {
        let memory = self.memory_for(tape, source)?;
        let tgt = self.model.tokenizer.encode(text);
        Ok(self
            .model
            .per_token_logprob_graph(tape, &self.params, memory, &tgt)?)
    }

    fn content_logprobs(
        &mut self,
        tape: &mut Tape,
        source: &str,
        text: &str,
    ) -> Result<TensorId, LossError> {
        let memory = self.memory_for(tape, source)?;
        let tgt = self.model.tokenizer.encode(text);
        Ok(self
            .model
            .content_logprob_graph(tape, &self.params, memory, &tgt)?)
    }
}

/// A violation paired with the source sentence it must be scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeExample {
    pub source: String,
    pub violation: ViolationRecord,
}

/// Index into one side of a mixed batch, in presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive(usize),
    Negative(usize),
}

/// Positives and negatives of one step. Presentation order is shuffled so
/// neither side is positionally segregated; the loss itself always
/// accumulates in canonical insertion order, which keeps runs with
/// `alpha = 0` bit-identical to runs without any negatives.
#[derive(Debug, Clone)]
pub struct MixedBatch {
    positives: Vec<ParallelPair>,
    negatives: Vec<NegativeExample>,
    order: Vec<Sign>,
}

impl MixedBatch {
    pub fn new(
        positives: Vec<ParallelPair>,
        negatives: Vec<NegativeExample>,
        rng: &mut impl Rng,
    ) -> MixedBatch {
        let mut order: Vec<Sign> = (0..positives.len())
            .map(Sign::Positive)
            .chain((0..negatives.len()).map(Sign::Negative))
            .collect();
        order.shuffle(rng);
        MixedBatch {
            positives,
            negatives,
            order,
        }
    }

    pub fn positives(&self) -> &[ParallelPair] {
        &self.positives
    }

    pub fn negatives(&self) -> &[NegativeExample] {
        &self.negatives
    }

    pub fn presentation_order(&self) -> &[Sign] {
        &self.order
    }

    pub fn n_pos(&self) -> usize {
        self.positives.len()
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len()
    }

    pub fn mean_severity(&self) -> f64 {
        if self.negatives.is_empty() {
            return 0.0;
        }
        self.negatives
            .iter()
            .map(|n| n.violation.severity)
            .sum::<f64>()
            / self.negatives.len() as f64
    }
}

/// How a violation's likelihood is penalized. Both forms score only the
/// violation's own words and token-mean within each sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// Bounded per-token `-log(1 - p_t)`.
    #[default]
    Unlikelihood,
    /// Raw `mean_t log p_t`; unbounded below under minimization.
    Literal,
}

/// Handles to the three loss nodes of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossIds {
    pub total: TensorId,
    pub l_pos: TensorId,
    pub l_neg: TensorId,
}

/// Per-step summary, one JSON object per training step in run logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub total: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    pub alpha: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub mean_severity: f64,
}

impl LossIds {
    pub fn report(&self, tape: &Tape, step: u64, alpha: f64, batch: &MixedBatch) -> LossReport {
        LossReport {
            step,
            total: tape.value(self.total).item(),
            l_pos: tape.value(self.l_pos).item(),
            l_neg: tape.value(self.l_neg).item(),
            alpha,
            n_pos: batch.n_pos(),
            n_neg: batch.n_neg(),
            mean_severity: batch.mean_severity(),
        }
    }
}

/// Mean over positive pairs of the per-sentence token-mean negative
/// log-likelihood. Token-mean, not token-sum, so sentence length does not
/// reweight pairs against each other.
pub fn positive_loss<G: ScoreGraph + ?Sized>(
    graph: &mut G,
    tape: &mut Tape,
    batch: &MixedBatch,
) -> Result<TensorId, LossError> {
    if batch.positives.is_empty() {
        return Err(LossError::EmptyPositives);
    }
    let mut acc: Option<TensorId> = None;
    for pair in &batch.positives {
        let lp = graph.per_token_logprobs(tape, &pair.source, &pair.target)?;
        let sentence_mean = tape.mean(lp);
        acc = Some(match acc {
            Some(a) => tape.add(a, sentence_mean)?,
            None => sentence_mean,
        });
    }
    let summed = acc.expect("at least one positive");
    Ok(tape.scale(summed, -1.0 / batch.n_pos() as f64))
}

/// Mean severity-weighted penalty of the violations; exactly zero when the
/// batch has none.
pub fn negative_loss<G: ScoreGraph + ?Sized>(
    graph: &mut G,
    tape: &mut Tape,
    batch: &MixedBatch,
    form: PenaltyForm,
) -> Result<TensorId, LossError> {
    if batch.negatives.is_empty() {
        return Ok(tape.scalar_const(0.0));
    }
    let mut acc: Option<TensorId> = None;
    for neg in &batch.negatives {
        let severity = neg.violation.severity;
        if !severity.is_finite() || !(0.0..=1.0).contains(&severity) {
            return Err(LossError::BadSeverity { severity });
        }
        let lp = graph.content_logprobs(tape, &neg.source, &neg.violation.text)?;
        let penalty = match form {
            PenaltyForm::Literal => tape.mean(lp),
            PenaltyForm::Unlikelihood => {
                let p = tape.exp(lp);
                let neg_p = tape.scale(p, -1.0);
                let one_minus = tape.add_scalar(neg_p, 1.0);
                let clamped = tape.clamp_min(one_minus, UNLIKELIHOOD_CLAMP)?;
                let log_miss = tape.log(clamped);
                let neg_log_miss = tape.scale(log_miss, -1.0);
                tape.mean(neg_log_miss)
            }
        };
        let weighted = tape.scale(penalty, severity);
        acc = Some(match acc {
            Some(a) => tape.add(a, weighted)?,
            None => weighted,
        });
    }
    let summed = acc.expect("at least one negative");
    Ok(tape.scale(summed, 1.0 / batch.n_neg() as f64))
}

/// Builds `total = l_pos + alpha * l_neg` for one batch.
pub fn nsl_loss<G: ScoreGraph + ?Sized>(
    graph: &mut G,
    tape: &mut Tape,
    batch: &MixedBatch,
    alpha: f64,
    form: PenaltyForm,
) -> Result<LossIds, LossError> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(LossError::BadAlpha(alpha));
    }
    let l_pos = positive_loss(graph, tape, batch)?;
    let l_neg = negative_loss(graph, tape, batch, form)?;
    let scaled = tape.scale(l_neg, alpha);
    let total = tape.add(l_pos, scaled)?;
    Ok(LossIds {
        total,
        l_pos,
        l_neg,
    })
}
