//! Encoder-decoder translation model over whitespace tokens.
//!
//! The architecture is a small pre-norm transformer: bias-free linear maps,
//! parameter-free layer normalization, sinusoidal position constants, and an
//! embedding matrix tied between the input lookups and the output projection
//! (logits are `h @ Eᵀ`). Sequences are processed one at a time, so no
//! padding or length bucketing is needed.
//!
//! Parameters live on the model as plain tensors. Each forward pass leases
//! them onto a fresh [`Tape`] ([`Seq2SeqModel::lease`]), builds the graph,
//! and after `backward` copies gradients back with
//! [`Seq2SeqModel::pull_grads`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParallelPair;
use crate::rng::{purpose, stream};
use crate::tensor::{Tape, Tensor, TensorError, TensorId};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Layer-norm stabilizer, shared with the test oracle.
pub(crate) const LN_EPS: f64 = 1e-5;

pub const CHECKPOINT_MAGIC: &str = "nsl-mt-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot run the model on an empty token sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds the model maximum {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
}

// ───────────────────────── tokenizer ─────────────────────────

/// Whitespace tokenizer with a fixed special prefix: `<pad>`=0, `<bos>`=1,
/// `<eos>`=2, `<unk>`=3. The vocabulary is both sides of the training pairs
/// in first-seen order; unknown tokens encode to `<unk>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenList", into = "TokenList")]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenList(Vec<String>);

impl From<TokenList> for Tokenizer {
    fn from(list: TokenList) -> Self {
        Tokenizer::from_tokens(list.0)
    }
}

impl From<Tokenizer> for TokenList {
    fn from(t: Tokenizer) -> Self {
        TokenList(t.tokens)
    }
}

impl Tokenizer {
    fn from_tokens(tokens: Vec<String>) -> Tokenizer {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Tokenizer { tokens, index }
    }

    /// Builds the vocabulary from the given pairs (normally the train split).
    pub fn from_pairs(pairs: &[ParallelPair]) -> Tokenizer {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for pair in pairs {
            for tok in pair
                .source
                .split_whitespace()
                .chain(pair.target.split_whitespace())
            {
                if !index.contains_key(tok) {
                    index.insert(tok.to_string(), tokens.len());
                    tokens.push(tok.to_string());
                }
            }
        }
        Tokenizer { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|tok| self.index.get(tok).copied().unwrap_or(UNK))
            .collect()
    }

    /// Joins the tokens for the given ids, skipping the special ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id >= SPECIAL_TOKENS.len() && id < self.tokens.len())
            .map(|&id| self.tokens[id].as_str())
            .collect();
        words.join(" ")
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }
}

// ───────────────────────── configuration ─────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_ff: usize,
    /// Longest token sequence (source, or target including `<bos>`).
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            d_ff: 256,
            max_len: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0
            || self.n_heads == 0
            || self.n_encoder_layers == 0
            || self.n_decoder_layers == 0
            || self.d_ff == 0
            || self.max_len == 0
        {
            return Err(ModelError::InvalidConfig(
                "all dimensions must be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

// ───────────────────────── parameters ─────────────────────────

#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: AttentionWeights,
    pub w_ff1: Tensor,
    pub w_ff2: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: AttentionWeights,
    pub cross_attn: AttentionWeights,
    pub w_ff1: Tensor,
    pub w_ff2: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub w_q: TensorId,
    pub w_k: TensorId,
    pub w_v: TensorId,
    pub w_o: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayerIds {
    pub attn: AttnIds,
    pub w_ff1: TensorId,
    pub w_ff2: TensorId,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayerIds {
    pub self_attn: AttnIds,
    pub cross_attn: AttnIds,
    pub w_ff1: TensorId,
    pub w_ff2: TensorId,
}

/// Tape handles for one leased copy of the parameters.
#[derive(Debug, Clone)]
pub struct GraphParams {
    pub embedding: TensorId,
    pub encoder: Vec<EncLayerIds>,
    pub decoder: Vec<DecLayerIds>,
}

impl GraphParams {
    /// Handles in the same canonical order as [`Seq2SeqModel::parameters`].
    pub fn ids(&self) -> Vec<TensorId> {
        let mut out = vec![self.embedding];
        for layer in &self.encoder {
            out.extend([
                layer.attn.w_q,
                layer.attn.w_k,
                layer.attn.w_v,
                layer.attn.w_o,
                layer.w_ff1,
                layer.w_ff2,
            ]);
        }
        for layer in &self.decoder {
            out.extend([
                layer.self_attn.w_q,
                layer.self_attn.w_k,
                layer.self_attn.w_v,
                layer.self_attn.w_o,
                layer.cross_attn.w_q,
                layer.cross_attn.w_k,
                layer.cross_attn.w_v,
                layer.cross_attn.w_o,
                layer.w_ff1,
                layer.w_ff2,
            ]);
        }
        out
    }
}

// ───────────────────────── model ─────────────────────────

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub embedding: Tensor,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    /// Sinusoidal position table, `max_len x d_model`, not trained.
    pos: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    magic: String,
    version: u32,
    config: ModelConfig,
    tokenizer: Tokenizer,
    params: Vec<Tensor>,
}

fn gaussian(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data").with_grad()
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    gaussian(rng, vec![rows, cols], std)
}

fn attention_weights(rng: &mut ChaCha8Rng, d: usize) -> AttentionWeights {
    AttentionWeights {
        w_q: xavier(rng, d, d),
        w_k: xavier(rng, d, d),
        w_v: xavier(rng, d, d),
        w_o: xavier(rng, d, d),
    }
}

fn position_table(max_len: usize, d: usize) -> Vec<f64> {
    let mut pos = vec![0.0; max_len * d];
    for p in 0..max_len {
        for i in 0..d {
            let pair = (i / 2) * 2;
            let angle = p as f64 / 10000f64.powf(pair as f64 / d as f64);
            pos[p * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pos
}

impl Seq2SeqModel {
    pub fn new(
        config: ModelConfig,
        tokenizer: Tokenizer,
        seed: u64,
    ) -> Result<Seq2SeqModel, ModelError> {
        config.validate()?;
        let mut rng = stream(seed, &[purpose::INIT]);
        let d = config.d_model;
        let v = tokenizer.vocab_size();
        let embedding = gaussian(&mut rng, vec![v, d], 1.0 / (d as f64).sqrt());
        let encoder = (0..config.n_encoder_layers)
            .map(|_| EncoderLayer {
                attn: attention_weights(&mut rng, d),
                w_ff1: xavier(&mut rng, d, config.d_ff),
                w_ff2: xavier(&mut rng, config.d_ff, d),
            })
            .collect();
        let decoder = (0..config.n_decoder_layers)
            .map(|_| DecoderLayer {
                self_attn: attention_weights(&mut rng, d),
                cross_attn: attention_weights(&mut rng, d),
                w_ff1: xavier(&mut rng, d, config.d_ff),
                w_ff2: xavier(&mut rng, config.d_ff, d),
            })
            .collect();
        let pos = position_table(config.max_len, d);
        Ok(Seq2SeqModel {
            config,
            tokenizer,
            embedding,
            encoder,
            decoder,
            pos,
        })
    }

    /// Parameters in canonical order: embedding, then each encoder layer
    /// (q, k, v, o, ff1, ff2), then each decoder layer (self q..o,
    /// cross q..o, ff1, ff2).
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for layer in &self.encoder {
            out.extend([
                &layer.attn.w_q,
                &layer.attn.w_k,
                &layer.attn.w_v,
                &layer.attn.w_o,
                &layer.w_ff1,
                &layer.w_ff2,
            ]);
        }
        for layer in &self.decoder {
            out.extend([
                &layer.self_attn.w_q,
                &layer.self_attn.w_k,
                &layer.self_attn.w_v,
                &layer.self_attn.w_o,
                &layer.cross_attn.w_q,
                &layer.cross_attn.w_k,
                &layer.cross_attn.w_v,
                &layer.cross_attn.w_o,
                &layer.w_ff1,
                &layer.w_ff2,
            ]);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.encoder {
            out.extend([
                &mut layer.attn.w_q,
                &mut layer.attn.w_k,
                &mut layer.attn.w_v,
                &mut layer.attn.w_o,
                &mut layer.w_ff1,
                &mut layer.w_ff2,
            ]);
        }
        for layer in &mut self.decoder {
            out.extend([
                &mut layer.self_attn.w_q,
                &mut layer.self_attn.w_k,
                &mut layer.self_attn.w_v,
                &mut layer.self_attn.w_o,
                &mut layer.cross_attn.w_q,
                &mut layer.cross_attn.w_k,
                &mut layer.cross_attn.w_v,
                &mut layer.cross_attn.w_o,
                &mut layer.w_ff1,
                &mut layer.w_ff2,
            ]);
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    /// Copies every parameter onto the tape as a gradient-tracked leaf.
    pub fn lease(&self, tape: &mut Tape) -> GraphParams {
        let attn = |tape: &mut Tape, w: &AttentionWeights| AttnIds {
            w_q: tape.leaf(w.w_q.clone()),
            w_k: tape.leaf(w.w_k.clone()),
            w_v: tape.leaf(w.w_v.clone()),
            w_o: tape.leaf(w.w_o.clone()),
        };
        let embedding = tape.leaf(self.embedding.clone());
        let encoder = self
            .encoder
            .iter()
            .map(|layer| EncLayerIds {
                attn: attn(tape, &layer.attn),
                w_ff1: tape.leaf(layer.w_ff1.clone()),
                w_ff2: tape.leaf(layer.w_ff2.clone()),
            })
            .collect();
        let decoder = self
            .decoder
            .iter()
            .map(|layer| DecLayerIds {
                self_attn: attn(tape, &layer.self_attn),
                cross_attn: attn(tape, &layer.cross_attn),
                w_ff1: tape.leaf(layer.w_ff1.clone()),
                w_ff2: tape.leaf(layer.w_ff2.clone()),
            })
            .collect();
        GraphParams {
            embedding,
            encoder,
            decoder,
        }
    }

    /// Accumulates the tape's gradients for a leased copy back into the
    /// models' parameter `grad` buffers.
    pub fn pull_grads(&mut self, tape: &Tape, params: &GraphParams) {
        let ids = params.ids();
        for (param, id) in self.parameters_mut().into_iter().zip(ids) {
            if let Some(g) = tape.grad(id) {
                param.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn embed(
        &self,
        tape: &mut Tape,
        params: &GraphParams,
        ids: &[usize],
    ) -> Result<TensorId, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if ids.len() > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        let d = self.config.d_model;
        let looked = tape.embedding_lookup(params.embedding, ids)?;
        let scaled = tape.scale(looked, (d as f64).sqrt());
        let pos = Tensor::from_vec(
            vec![ids.len(), d],
            self.pos[..ids.len() * d].to_vec(),
        )
        .expect("position table covers max_len");
        let pos = tape.constant(pos);
        Ok(tape.add(scaled, pos)?)
    }

    fn attention(
        &self,
        tape: &mut Tape,
        x_q: TensorId,
        x_kv: TensorId,
        w: &AttnIds,
        causal: bool,
    ) -> Result<TensorId, ModelError> {
        let q = tape.matmul(x_q, w.w_q)?;
        let k = tape.matmul(x_kv, w.w_k)?;
        let v = tape.matmul(x_kv, w.w_v)?;
        let d = self.config.d_model;
        let dh = d / self.config.n_heads;
        let t_q = tape.value(q).rows();
        let t_k = tape.value(k).rows();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice(q, 1, lo, hi)?;
            let kh = tape.slice(k, 1, lo, hi)?;
            let vh = tape.slice(v, 1, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let scores = if causal {
                let mask: Vec<bool> = (0..t_q)
                    .flat_map(|i| (0..t_k).map(move |j| j > i))
                    .collect();
                tape.masked_fill(scores, &mask, f64::NEG_INFINITY)?
            } else {
                scores
            };
            let attn = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat(1, &heads)?;
        Ok(tape.matmul(merged, w.w_o)?)
    }

    fn feed_forward(
        &self,
        tape: &mut Tape,
        x: TensorId,
        w_ff1: TensorId,
        w_ff2: TensorId,
    ) -> Result<TensorId, ModelError> {
        let h = tape.matmul(x, w_ff1)?;
        let h = tape.relu(h);
        Ok(tape.matmul(h, w_ff2)?)
    }

    /// Runs the encoder over the source ids; returns the `[S, d]` memory.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &GraphParams,
        src_ids: &[usize],
    ) -> Result<TensorId, ModelError> {
        let mut x = self.embed(tape, params, src_ids)?;
        for layer in &params.encoder {
            let h = tape.normalize_rows(x, LN_EPS)?;
            let a = self.attention(tape, h, h, &layer.attn, false)?;
            x = tape.add(x, a)?;
            let h = tape.normalize_rows(x, LN_EPS)?;
            let f = self.feed_forward(tape, h, layer.w_ff1, layer.w_ff2)?;
            x = tape.add(x, f)?;
        }
        Ok(tape.normalize_rows(x, LN_EPS)?)
    }

    /// Decoder logits `[len(tgt_in), V]` for a teacher-forced prefix
    /// (`tgt_in` must start with `<bos>`). Self-attention is causal.
    pub fn decoder_logits(
        &self,
        tape: &mut Tape,
        params: &GraphParams,
        memory: TensorId,
        tgt_in: &[usize],
    ) -> Result<TensorId, ModelError> {
        let mut x = self.embed(tape, params, tgt_in)?;
        for layer in &params.decoder {
            let h = tape.normalize_rows(x, LN_EPS)?;
            let a = self.attention(tape, h, h, &layer.self_attn, true)?;
            x = tape.add(x, a)?;
            let h = tape.normalize_rows(x, LN_EPS)?;
            let a = self.attention(tape, h, memory, &layer.cross_attn, false)?;
            x = tape.add(x, a)?;
            let h = tape.normalize_rows(x, LN_EPS)?;
            let f = self.feed_forward(tape, h, layer.w_ff1, layer.w_ff2)?;
            x = tape.add(x, f)?;
        }
        let x = tape.normalize_rows(x, LN_EPS)?;
        let e_t = tape.transpose(params.embedding)?;
        Ok(tape.matmul(x, e_t)?)
    }

    /// Graph of per-token log-probabilities `log P(y_t | y_<t, x)` for the
    /// full target `tgt` (without specials), shape `[len(tgt) + 1]`; the
    /// final entry scores `<eos>`.
    pub fn per_token_logprob_graph(
        &self,
        tape: &mut Tape,
        params: &GraphParams,
        memory: TensorId,
        tgt: &[usize],
    ) -> Result<TensorId, ModelError> {
        let mut tgt_in = Vec::with_capacity(tgt.len() + 1);
        tgt_in.push(BOS);
        tgt_in.extend_from_slice(tgt);
        let mut tgt_out = tgt.to_vec();
        tgt_out.push(EOS);
        let logits = self.decoder_logits(tape, params, memory, &tgt_in)?;
        let logp = tape.log_softmax_rows(logits)?;
        Ok(tape.take_per_row(logp, &tgt_out)?)
    }

    /// Graph of per-token log-probabilities for the words of `tgt` only,
    /// shape `[len(tgt)]`; the `<eos>` step is not scored. The decoder rows
    /// are causal, so each entry equals the matching prefix of
    /// [`Self::per_token_logprob_graph`].
    pub fn content_logprob_graph(
        &self,
        tape: &mut Tape,
        params: &GraphParams,
        memory: TensorId,
        tgt: &[usize],
    ) -> Result<TensorId, ModelError> {
        if tgt.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let mut tgt_in = Vec::with_capacity(tgt.len());
        tgt_in.push(BOS);
        tgt_in.extend_from_slice(&tgt[..tgt.len() - 1]);
        let logits = self.decoder_logits(tape, params, memory, &tgt_in)?;
        let logp = tape.log_softmax_rows(logits)?;
        Ok(tape.take_per_row(logp, tgt)?)
    }

    /// Per-token log-probabilities on a throwaway tape.
    pub fn per_token_log_probs(&self, src: &str, tgt: &str) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let params = self.lease(&mut tape);
        let memory = self.encode(&mut tape, &params, &self.tokenizer.encode(src))?;
        let lp = self.per_token_logprob_graph(
            &mut tape,
            &params,
            memory,
            &self.tokenizer.encode(tgt),
        )?;
        Ok(tape.value(lp).data.clone())
    }

    /// Total `log P(tgt | src)` including the terminating `<eos>`.
    pub fn sequence_log_prob(&self, src: &str, tgt: &str) -> Result<f64, ModelError> {
        Ok(self.per_token_log_probs(src, tgt)?.iter().sum())
    }

    /// Greedy argmax decoding, at most `max_len - 1` tokens. Ties break
    /// toward the lower id.
    pub fn greedy_decode(&self, src: &str) -> Result<String, ModelError> {
        let mut tape = Tape::new();
        let params = self.lease(&mut tape);
        let memory = self.encode(&mut tape, &params, &self.tokenizer.encode(src))?;
        let mut out: Vec<usize> = Vec::new();
        loop {
            let mut tgt_in = Vec::with_capacity(out.len() + 1);
            tgt_in.push(BOS);
            tgt_in.extend_from_slice(&out);
            let logits = self.decoder_logits(&mut tape, &params, memory, &tgt_in)?;
            let t = tape.value(logits);
            let v = t.cols();
            let last = &t.data[(t.rows() - 1) * v..];
            let next = last
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
                    if x > bv {
                        (i, x)
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            if next == EOS || tgt_in.len() >= self.config.max_len {
                break;
            }
            out.push(next);
        }
        Ok(self.tokenizer.decode(&out))
    }

    // ───────────────────────── checkpoints ─────────────────────────

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let params = self
            .parameters()
            .iter()
            .map(|p| {
                let mut t = (*p).clone();
                t.grad = None;
                t
            })
            .collect();
        let ckpt = Checkpoint {
            magic: CHECKPOINT_MAGIC.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            params,
        };
        let json = serde_json::to_string(&ckpt).expect("checkpoint serializes");
        fs::write(path, json).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Seq2SeqModel, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| ModelError::Checkpoint(format!("unreadable json: {e}")))?;
        if ckpt.magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint(format!(
                "magic \"{}\" is not \"{CHECKPOINT_MAGIC}\"",
                ckpt.magic
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let mut model = Seq2SeqModel::new(ckpt.config, ckpt.tokenizer, 0)?;
        let expected: Vec<Vec<usize>> = model
            .parameters()
            .iter()
            .map(|p| p.shape.clone())
            .collect();
        if ckpt.params.len() != expected.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameter tensors, expected {}",
                ckpt.params.len(),
                expected.len()
            )));
        }
        for ((param, stored), shape) in model
            .parameters_mut()
            .into_iter()
            .zip(ckpt.params)
            .zip(expected)
        {
            if stored.shape != shape {
                return Err(ModelError::Checkpoint(format!(
                    "parameter shape {:?} does not match model shape {:?}",
                    stored.shape, shape
                )));
            }
            if stored.data.len() != stored.shape.iter().product::<usize>() {
                return Err(ModelError::Checkpoint(
                    "parameter data length does not match its shape".into(),
                ));
            }
            param.data = stored.data;
            param.requires_grad = true;
            param.grad = None;
        }
        Ok(model)
    }
}
