//! Negative-space training for toy-scale machine translation.
//!
//! The crate trains small encoder-decoder translation models on parallel
//! corpora while explicitly penalizing rule-generated "violations": corrupted
//! target sentences that exhibit known error patterns (broken agreement, wrong
//! word order, inserted source-language function words). The training
//! objective is `L = L_pos + alpha * L_neg`, where `L_pos` is ordinary
//! cross-entropy on correct pairs and `L_neg` is a severity-weighted penalty
//! that pushes probability mass away from each violation.
//!
//! Modules follow the data path:
//!
//! * [`corpus`]: parallel corpus loading, deterministic splits, and a toy
//!   bilingual generator with contrasting grammars.
//! * [`rules`]: constraint rule files, matching, and violation generation.
//! * [`tensor`]: a minimal dense `f64` tensor library with reverse-mode
//!   automatic differentiation.
//! * [`model`]: whitespace tokenizer and a small transformer encoder-decoder.
//! * [`loss`]: positive, negative, and combined training losses.
//! * [`trainer`]: AdamW training loop with warmup, clipping, and checkpoints.
//! * [`metrics`]: BLEU, chrF++, bootstrap confidence intervals, correlation.
//! * [`harness`]: experiment plans (compare, ablation, data efficiency,
//!   alpha sweep, ratio sweep) and report emission.

pub mod corpus;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod rules;
pub mod tensor;
pub mod trainer;
