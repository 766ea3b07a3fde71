//! Corpus-level translation metrics.
//!
//! BLEU adapts its n-gram order to short outputs: the order is capped at the
//! shortest hypothesis length (at most 4) and the cap is reported alongside
//! the score, so a 3-token corpus is scored with up to trigrams instead of
//! collapsing to zero. chrF++ mixes character n-grams (orders 1-6, computed
//! with whitespace removed) and word n-grams (orders 1-2) with recall weight
//! `beta = 2`. Both return scores on a 0-100 scale.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{purpose, stream};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{left} hypotheses vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("correlation is undefined when a side has zero variance")]
    ZeroVariance,
}

/// A metric value plus how it was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    /// Point estimate on the full corpus, 0-100.
    pub score: f64,
    /// 95% bootstrap interval endpoints; absent when no bootstrap was run.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_segments: usize,
    /// BLEU's effective maximum n-gram order; `None` for other metrics.
    pub ngram_cap: Option<usize>,
}

/// The corpus metrics this toolkit computes. COMET is a learned metric and
/// is deliberately not here; reports that want a COMET column mark it
/// unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    #[serde(rename = "chrfpp")]
    ChrfPp,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::ChrfPp => "chrfpp",
        }
    }

    pub fn score(self, hyps: &[String], refs: &[String]) -> Result<f64, MetricError> {
        match self {
            Metric::Bleu => bleu(hyps, refs),
            Metric::ChrfPp => chrf_pp(hyps, refs),
        }
    }

    /// Point estimate without a confidence interval.
    pub fn report(self, hyps: &[String], refs: &[String]) -> Result<MetricReport, MetricError> {
        let score = self.score(hyps, refs)?;
        Ok(MetricReport {
            metric: self.name().to_string(),
            score,
            ci_low: None,
            ci_high: None,
            n_segments: hyps.len(),
            ngram_cap: match self {
                Metric::Bleu => Some(bleu_cap(hyps)),
                Metric::ChrfPp => None,
            },
        })
    }
}

fn check_corpus(hyps: &[String], refs: &[String]) -> Result<(), MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

fn word_ngrams(tokens: &[&str], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window.join("\u{1f}")).or_insert(0) += 1;
    }
    counts
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if n == 0 || chars.len() < n {
        return counts;
    }
    for window in chars.windows(n) {
        *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
    }
    counts
}

fn clipped_matches(hyp: &HashMap<String, usize>, reference: &HashMap<String, usize>) -> usize {
    hyp.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// The n-gram order BLEU will use: `min(4, shortest hypothesis length)`.
pub fn bleu_cap(hyps: &[String]) -> usize {
    hyps.iter()
        .map(|h| h.split_whitespace().count())
        .min()
        .unwrap_or(0)
        .min(4)
}

/// Corpus BLEU on the 0-100 scale with brevity penalty and an n-gram cap of
/// `min(4, shortest hypothesis length)`. A corpus containing an empty
/// hypothesis scores 0.
pub fn bleu(hyps: &[String], refs: &[String]) -> Result<f64, MetricError> {
    check_corpus(hyps, refs)?;
    let hyp_tokens: Vec<Vec<&str>> = hyps
        .iter()
        .map(|h| h.split_whitespace().collect())
        .collect();
    let ref_tokens: Vec<Vec<&str>> = refs
        .iter()
        .map(|r| r.split_whitespace().collect())
        .collect();

    let cap = bleu_cap(hyps);
    if cap == 0 {
        return Ok(0.0);
    }

    let hyp_len: usize = hyp_tokens.iter().map(|t| t.len()).sum();
    let ref_len: usize = ref_tokens.iter().map(|t| t.len()).sum();

    let mut log_precision_sum = 0.0;
    for n in 1..=cap {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (h, r) in hyp_tokens.iter().zip(&ref_tokens) {
            let hc = word_ngrams(h, n);
            let rc = word_ngrams(r, n);
            matched += clipped_matches(&hc, &rc);
            total += h.len().saturating_sub(n - 1);
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matched as f64 / total as f64).ln();
    }

    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_precision_sum / cap as f64).exp())
}

fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

const CHRF_CHAR_ORDERS: usize = 6;
const CHRF_WORD_ORDERS: usize = 2;
const CHRF_BETA: f64 = 2.0;

/// chrF++ on the 0-100 scale: mean F-score over character n-gram orders 1-6
/// and word n-gram orders 1-2, aggregated over the corpus per order. Orders
/// with no n-grams on either side are skipped.
pub fn chrf_pp(hyps: &[String], refs: &[String]) -> Result<f64, MetricError> {
    check_corpus(hyps, refs)?;
    let hyp_chars: Vec<Vec<char>> = hyps
        .iter()
        .map(|h| h.chars().filter(|c| !c.is_whitespace()).collect())
        .collect();
    let ref_chars: Vec<Vec<char>> = refs
        .iter()
        .map(|r| r.chars().filter(|c| !c.is_whitespace()).collect())
        .collect();
    let hyp_tokens: Vec<Vec<&str>> = hyps
        .iter()
        .map(|h| h.split_whitespace().collect())
        .collect();
    let ref_tokens: Vec<Vec<&str>> = refs
        .iter()
        .map(|r| r.split_whitespace().collect())
        .collect();

    let mut f_scores = Vec::new();
    for order in 0..CHRF_CHAR_ORDERS + CHRF_WORD_ORDERS {
        let mut matched = 0usize;
        let mut hyp_total = 0usize;
        let mut ref_total = 0usize;
        for i in 0..hyps.len() {
            let (hc, rc) = if order < CHRF_CHAR_ORDERS {
                let n = order + 1;
                (char_ngrams(&hyp_chars[i], n), char_ngrams(&ref_chars[i], n))
            } else {
                let n = order - CHRF_CHAR_ORDERS + 1;
                (word_ngrams(&hyp_tokens[i], n), word_ngrams(&ref_tokens[i], n))
            };
            matched += clipped_matches(&hc, &rc);
            hyp_total += hc.values().sum::<usize>();
            ref_total += rc.values().sum::<usize>();
        }
        if hyp_total == 0 && ref_total == 0 {
            continue;
        }
        let precision = if hyp_total == 0 {
            0.0
        } else {
            matched as f64 / hyp_total as f64
        };
        let recall = if ref_total == 0 {
            0.0
        } else {
            matched as f64 / ref_total as f64
        };
        f_scores.push(f_beta(precision, recall, CHRF_BETA));
    }

    if f_scores.is_empty() {
        Ok(0.0)
    } else {
        Ok(100.0 * f_scores.iter().sum::<f64>() / f_scores.len() as f64)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Percentile bootstrap 95% confidence interval (2.5th and 97.5th
/// percentiles) of an arbitrary corpus score under segment resampling with
/// replacement. Each iteration draws from its own stream, so the interval
/// is a pure function of `(corpus, iterations, seed)`.
pub fn bootstrap_interval<F>(
    hyps: &[String],
    refs: &[String],
    iterations: usize,
    seed: u64,
    score: F,
) -> Result<(f64, f64), MetricError>
where
    F: Fn(&[String], &[String]) -> Result<f64, MetricError>,
{
    check_corpus(hyps, refs)?;
    if iterations == 0 {
        return Err(MetricError::InvalidArgument(
            "bootstrap needs at least one iteration".into(),
        ));
    }
    let n = hyps.len();
    let mut scores = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let mut rng = stream(seed, &[purpose::BOOTSTRAP, i as u64]);
        let mut sample_hyps = Vec::with_capacity(n);
        let mut sample_refs = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = rng.random_range(0..n);
            sample_hyps.push(hyps[idx].clone());
            sample_refs.push(refs[idx].clone());
        }
        scores.push(score(&sample_hyps, &sample_refs)?);
    }
    scores.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    Ok((percentile(&scores, 0.025), percentile(&scores, 0.975)))
}

/// Full-corpus point estimate plus a bootstrapped 95% interval.
pub fn bootstrap_ci(
    metric: Metric,
    hyps: &[String],
    refs: &[String],
    iterations: usize,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    let mut report = metric.report(hyps, refs)?;
    let (low, high) = bootstrap_interval(hyps, refs, iterations, seed, |h, r| metric.score(h, r))?;
    report.ci_low = Some(low);
    report.ci_high = Some(high);
    Ok(report)
}

/// Pearson correlation coefficient. Errors on length mismatch, fewer than
/// two points, or zero variance on either side.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(MetricError::InvalidArgument(
            "correlation needs at least two points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(cov / (var_x * var_y).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyLanguageSpec};
    use proptest::prelude::*;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bleu_identity_is_exactly_100() {
        let texts = s(&["musa kayna buru nwa", "hansi-yan turi di-ma", "boro tira gar"]);
        assert_eq!(bleu(&texts, &texts).unwrap(), 100.0);
        let rep = Metric::Bleu.report(&texts, &texts).unwrap();
        assert_eq!(rep.ngram_cap, Some(3));
        assert_eq!(rep.n_segments, 3);
        assert_eq!(rep.metric, "bleu");
        assert_eq!(rep.ci_low, None);
    }

    #[test]
    fn bleu_zero_overlap_is_zero() {
        assert_eq!(bleu(&s(&["a b c d"]), &s(&["w x y z"])).unwrap(), 0.0);
    }

    #[test]
    fn bleu_short_hypothesis_matches_frozen_value() {
        // 3-token hypothesis: trigram cap, perfect precisions, brevity
        // penalty exp(1 - 4/3).
        let hyps = s(&["the cat sat"]);
        let score = bleu(&hyps, &s(&["the cat sat down"])).unwrap();
        assert_eq!(bleu_cap(&hyps), 3);
        assert!((score - 71.65313105737893).abs() < 1e-9, "got {score}");
    }

    #[test]
    fn bleu_cap_follows_the_shortest_hypothesis() {
        let hyps = s(&["a b", "a b c d e"]);
        assert_eq!(bleu_cap(&hyps), 2);
        assert_eq!(bleu(&hyps, &hyps).unwrap(), 100.0);
        assert_eq!(bleu_cap(&s(&["a b c d e f"])), 4, "cap never exceeds 4");
    }

    #[test]
    fn bleu_clips_repeated_tokens() {
        // "the" appears once in the reference, so only one of four counts.
        let score = bleu(&s(&["the the the the"]), &s(&["the cat"])).unwrap();
        assert_eq!(score, 0.0, "no bigram match forces zero");
        // Unigram-only corpus shows the clipping directly.
        let hyps = s(&["the", "the", "the", "cat"]);
        let refs = s(&["the", "dog", "dog", "cat"]);
        assert_eq!(bleu_cap(&hyps), 1);
        assert!((bleu(&hyps, &refs).unwrap() - 50.0).abs() < 1e-9, "2 of 4 clipped unigrams");
    }

    #[test]
    fn bleu_empty_hypothesis_scores_zero_with_cap_zero() {
        let hyps = s(&["", "a b c"]);
        assert_eq!(bleu(&hyps, &s(&["a", "a b c"])).unwrap(), 0.0);
        assert_eq!(bleu_cap(&hyps), 0);
    }

    #[test]
    fn bleu_rejects_mismatched_or_empty_corpora() {
        assert!(matches!(
            bleu(&s(&["a"]), &s(&["a", "b"])),
            Err(MetricError::LengthMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(bleu(&[], &[]), Err(MetricError::EmptyCorpus)));
    }

    #[test]
    fn bleu_is_invariant_under_corpus_permutation() {
        let spec = ToyLanguageSpec { seed: 23, ..Default::default() };
        let pairs = generate_toy_corpus(&spec, 40);
        let hyps: Vec<String> = pairs.iter().map(|p| p.target.clone()).collect();
        let refs: Vec<String> = generate_toy_corpus(&ToyLanguageSpec { seed: 24, ..Default::default() }, 40)
            .iter()
            .map(|p| p.target.clone())
            .collect();
        let base = bleu(&hyps, &refs).unwrap();
        let mut hyps_rev = hyps.clone();
        let mut refs_rev = refs.clone();
        hyps_rev.reverse();
        refs_rev.reverse();
        let rev = bleu(&hyps_rev, &refs_rev).unwrap();
        assert_eq!(base.to_bits(), rev.to_bits());
        let c = chrf_pp(&hyps, &refs).unwrap();
        let c_rev = chrf_pp(&hyps_rev, &refs_rev).unwrap();
        assert_eq!(c.to_bits(), c_rev.to_bits());
    }

    /// Independent BLEU built around per-sentence count maps with `Vec`
    /// keys, used as an oracle.
    fn naive_bleu(hyps: &[Vec<&str>], refs: &[Vec<&str>]) -> f64 {
        let cap = hyps.iter().map(|h| h.len()).min().unwrap().min(4);
        if cap == 0 {
            return 0.0;
        }
        let mut precisions = Vec::new();
        for n in 1..=cap {
            let mut num = 0usize;
            let mut den = 0usize;
            for (h, r) in hyps.iter().zip(refs) {
                let mut rc: HashMap<Vec<&str>, usize> = HashMap::new();
                if r.len() >= n {
                    for w in r.windows(n) {
                        *rc.entry(w.to_vec()).or_insert(0) += 1;
                    }
                }
                let mut hc: HashMap<Vec<&str>, usize> = HashMap::new();
                if h.len() >= n {
                    for w in h.windows(n) {
                        *hc.entry(w.to_vec()).or_insert(0) += 1;
                    }
                }
                for (g, c) in hc {
                    num += c.min(rc.get(&g).copied().unwrap_or(0));
                }
                den += h.len().saturating_sub(n - 1);
            }
            if num == 0 {
                return 0.0;
            }
            precisions.push(num as f64 / den as f64);
        }
        let c: usize = hyps.iter().map(|h| h.len()).sum();
        let r: usize = refs.iter().map(|x| x.len()).sum();
        let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        100.0 * bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / cap as f64).exp()
    }

    #[test]
    fn bleu_agrees_with_independent_implementation() {
        for seed in [3u64, 9, 27] {
            let hyps: Vec<String> =
                generate_toy_corpus(&ToyLanguageSpec { seed, ..Default::default() }, 30)
                    .iter()
                    .map(|p| p.target.clone())
                    .collect();
            let refs: Vec<String> =
                generate_toy_corpus(&ToyLanguageSpec { seed: seed + 1, ..Default::default() }, 30)
                    .iter()
                    .map(|p| p.target.clone())
                    .collect();
            let got = bleu(&hyps, &refs).unwrap();
            let hyp_toks: Vec<Vec<&str>> =
                hyps.iter().map(|h| h.split_whitespace().collect()).collect();
            let ref_toks: Vec<Vec<&str>> =
                refs.iter().map(|r| r.split_whitespace().collect()).collect();
            let want = naive_bleu(&hyp_toks, &ref_toks);
            assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
        }
    }

    #[test]
    fn chrf_identity_is_100_and_disjoint_is_0() {
        let texts = s(&["musa kayna nwa", "boro tira gar-ma"]);
        assert!((chrf_pp(&texts, &texts).unwrap() - 100.0).abs() < 1e-12);
        let rep = Metric::ChrfPp.report(&texts, &texts).unwrap();
        assert_eq!(rep.ngram_cap, None);
        assert_eq!(rep.metric, "chrfpp");
        assert_eq!(chrf_pp(&s(&["abc"]), &s(&["xyz"])).unwrap(), 0.0);
    }

    #[test]
    fn chrf_transposition_matches_hand_computation() {
        // hyp "ab" vs ref "ba": char-1 F = 1, char-2 F = 0, word-1 F = 0,
        // all other orders empty on both sides, so the mean is 1/3.
        let score = chrf_pp(&s(&["ab"]), &s(&["ba"])).unwrap();
        assert!((score - 100.0 / 3.0).abs() < 1e-9, "got {score}");
    }

    #[test]
    fn f_beta_weights_recall_twice() {
        assert_eq!(f_beta(1.0, 0.5, 2.0), 5.0 * 1.0 * 0.5 / (4.0 + 0.5));
        assert_eq!(f_beta(0.0, 0.0, 2.0), 0.0);
        assert!((f_beta(0.5, 0.5, 2.0) - 0.5).abs() < 1e-15);
        // Swapping P and R moves the score when beta != 1.
        assert!(f_beta(1.0, 0.5, 2.0) < f_beta(0.5, 1.0, 2.0));
    }

    #[test]
    fn chrf_is_order_sensitive_but_forgiving() {
        let reference = s(&["musa kayna nwa"]);
        let reordered = s(&["nwa kayna musa"]);
        let score = chrf_pp(&reordered, &reference).unwrap();
        assert!(score > 0.0 && score < 100.0, "got {score}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Corrupting one token of one hypothesis with an out-of-corpus
        /// symbol never raises either metric.
        #[test]
        fn corrupting_a_token_never_raises_scores(seed in 0u64..200, victim in 0usize..10) {
            let refs: Vec<String> =
                generate_toy_corpus(&ToyLanguageSpec { seed, ..Default::default() }, 10)
                    .iter()
                    .map(|p| p.target.clone())
                    .collect();
            let mut hyps = refs.clone();
            let mut tokens: Vec<&str> = hyps[victim].split_whitespace().collect();
            tokens[0] = "zzzqqq";
            hyps[victim] = tokens.join(" ");
            let clean_bleu = bleu(&refs, &refs).unwrap();
            let dirty_bleu = bleu(&hyps, &refs).unwrap();
            prop_assert!(dirty_bleu <= clean_bleu + 1e-12);
            let clean_chrf = chrf_pp(&refs, &refs).unwrap();
            let dirty_chrf = chrf_pp(&hyps, &refs).unwrap();
            prop_assert!(dirty_chrf <= clean_chrf + 1e-12);
        }
    }

    // ─── bootstrap ───

    #[test]
    fn bootstrap_is_zero_width_for_identical_corpora() {
        let texts: Vec<String> =
            generate_toy_corpus(&ToyLanguageSpec { seed: 4, ..Default::default() }, 20)
                .iter()
                .map(|p| p.target.clone())
                .collect();
        let rep = bootstrap_ci(Metric::Bleu, &texts, &texts, 100, 7).unwrap();
        assert_eq!(rep.score, 100.0);
        assert_eq!(rep.ci_low, Some(100.0));
        assert_eq!(rep.ci_high, Some(100.0));
        assert_eq!(rep.n_segments, 20);
    }

    #[test]
    fn bootstrap_single_iteration_collapses() {
        let hyps = s(&["a b c", "a b d"]);
        let refs = s(&["a b c", "a x y"]);
        let (lo, hi) = bootstrap_interval(&hyps, &refs, 1, 3, |h, r| bleu(h, r)).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn bootstrap_is_deterministic_and_brackets_the_point_estimate() {
        let spec = ToyLanguageSpec { seed: 31, ..Default::default() };
        let refs: Vec<String> = generate_toy_corpus(&spec, 40)
            .iter()
            .map(|p| p.target.clone())
            .collect();
        // Corrupt a third of the hypotheses so scores vary across resamples.
        let mut hyps = refs.clone();
        for i in (0..hyps.len()).step_by(3) {
            hyps[i] = format!("zz {}", hyps[i]);
        }
        let run = || bootstrap_ci(Metric::Bleu, &hyps, &refs, 100, 11).unwrap();
        let rep = run();
        assert_eq!(rep, run(), "same seed, same interval");
        let (lo, hi) = (rep.ci_low.unwrap(), rep.ci_high.unwrap());
        assert!(lo < hi, "corrupted corpus should have a spread");
        assert!(lo <= rep.score && rep.score <= hi, "{} outside [{lo}, {hi}]", rep.score);
        let rep2 = bootstrap_ci(Metric::Bleu, &hyps, &refs, 100, 12).unwrap();
        assert_ne!((rep.ci_low, rep.ci_high), (rep2.ci_low, rep2.ci_high));
    }

    #[test]
    fn bootstrap_interval_contains_the_point_estimate_almost_always() {
        // 120 random noisy corpora; the 95% percentile interval must
        // bracket the full-corpus score in at least 99% of them.
        let mut contained = 0;
        let runs = 120;
        for trial in 0..runs {
            let spec = ToyLanguageSpec { seed: 1000 + trial, ..Default::default() };
            let refs: Vec<String> = generate_toy_corpus(&spec, 15)
                .iter()
                .map(|p| p.target.clone())
                .collect();
            let mut noise = stream(trial, &[99]);
            let hyps: Vec<String> = refs
                .iter()
                .map(|r| {
                    let mut toks: Vec<&str> = r.split_whitespace().collect();
                    if noise.random_range(0..3) == 0 {
                        let i = noise.random_range(0..toks.len());
                        toks[i] = "zzz";
                    }
                    toks.join(" ")
                })
                .collect();
            let rep = bootstrap_ci(Metric::Bleu, &hyps, &refs, 200, trial).unwrap();
            if rep.ci_low.unwrap() <= rep.score && rep.score <= rep.ci_high.unwrap() {
                contained += 1;
            }
        }
        assert!(
            contained as f64 >= 0.99 * runs as f64,
            "point estimate inside CI in only {contained}/{runs} corpora"
        );
    }

    #[test]
    fn bootstrap_rejects_zero_iterations() {
        let t = s(&["a"]);
        assert!(matches!(
            bootstrap_ci(Metric::Bleu, &t, &t, 0, 1),
            Err(MetricError::InvalidArgument(_))
        ));
    }

    // ─── pearson ───

    #[test]
    fn pearson_is_exactly_one_for_affine_data() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -0.5 * x + 3.0).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_a_two_pass_oracle() {
        let mut rng = stream(17, &[1]);
        let xs: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 0.7 * x + rng.random_range(-1.0..1.0))
            .collect();
        let got = pearson(&xs, &ys).unwrap();
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let sxx: f64 = xs.iter().map(|a| a * a).sum();
        let syy: f64 = ys.iter().map(|b| b * b).sum();
        let want = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got > 0.5, "strongly correlated construction");
    }

    #[test]
    fn pearson_rejects_degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(MetricError::ZeroVariance)
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(MetricError::InvalidArgument(_))
        ));
    }
}
