//! Parallel corpus loading, deterministic splits, and a toy bilingual
//! generator.
//!
//! The toy language pair is built so that every constraint category has
//! guaranteed application sites in every sentence: the source language is
//! SVO with freestanding articles, an auxiliary before the verb, and
//! prenominal adjectives; the target language is SOV with no articles,
//! postnominal adjectives, a suffixal plural, and plural verb agreement.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{purpose, stream};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate pair id \"{id}\" at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("duplicate pair id \"{id}\"")]
    DuplicatePairId { id: String },
    #[error("split needs {required} pairs but only {available} are available")]
    InsufficientPairs { required: usize, available: usize },
    #[error("subsample of {requested} exceeds train split of {available}")]
    SubsampleTooLarge { requested: usize, available: usize },
    #[error("pair \"{id}\" contains a tab or newline and cannot be written as TSV")]
    UnwritableAsTsv { id: String },
}

/// One aligned sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

#[derive(Deserialize)]
struct RawJsonPair {
    id: Option<String>,
    source: String,
    target: String,
}

fn check_sides(source: &str, target: &str, line: usize) -> Result<(), CorpusError> {
    if source.trim().is_empty() {
        return Err(CorpusError::Malformed {
            line,
            reason: "empty source".into(),
        });
    }
    if target.trim().is_empty() {
        return Err(CorpusError::Malformed {
            line,
            reason: "empty target".into(),
        });
    }
    Ok(())
}

/// Loads a parallel corpus. JSONL records are objects with `source`,
/// `target`, and an optional `id`; pairs without an id get their 0-based
/// record index as a decimal string. TSV rows are `source<TAB>target`.
/// Whitespace-only lines are skipped. An empty file is an empty corpus.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<ParallelPair>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut pairs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut record = 0usize;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let pair = match format {
            CorpusFormat::Jsonl => {
                let raw: RawJsonPair =
                    serde_json::from_str(raw_line).map_err(|e| CorpusError::Malformed {
                        line,
                        reason: e.to_string(),
                    })?;
                check_sides(&raw.source, &raw.target, line)?;
                ParallelPair {
                    id: raw.id.unwrap_or_else(|| record.to_string()),
                    source: raw.source.trim().to_string(),
                    target: raw.target.trim().to_string(),
                }
            }
            CorpusFormat::Tsv => {
                let fields: Vec<&str> = raw_line.split('\t').collect();
                if fields.len() != 2 {
                    return Err(CorpusError::Malformed {
                        line,
                        reason: format!("expected 2 tab-separated columns, got {}", fields.len()),
                    });
                }
                check_sides(fields[0], fields[1], line)?;
                ParallelPair {
                    id: record.to_string(),
                    source: fields[0].trim().to_string(),
                    target: fields[1].trim().to_string(),
                }
            }
        };
        if !seen.insert(pair.id.clone()) {
            return Err(CorpusError::DuplicateId { id: pair.id, line });
        }
        pairs.push(pair);
        record += 1;
    }
    Ok(pairs)
}

/// Writes a corpus. JSONL keeps ids; TSV drops them by design.
pub fn write_corpus(
    pairs: &[ParallelPair],
    path: &Path,
    format: CorpusFormat,
) -> Result<(), CorpusError> {
    let mut out = String::new();
    for pair in pairs {
        match format {
            CorpusFormat::Jsonl => {
                let line = serde_json::to_string(pair).expect("pair serializes");
                out.push_str(&line);
                out.push('\n');
            }
            CorpusFormat::Tsv => {
                let bad = |s: &str| s.contains('\t') || s.contains('\n');
                if bad(&pair.source) || bad(&pair.target) {
                    return Err(CorpusError::UnwritableAsTsv {
                        id: pair.id.clone(),
                    });
                }
                let _ = writeln!(out, "{}\t{}", pair.source, pair.target);
            }
        }
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// SHA-256 over `id\tsource\ttarget\n` per pair, hex-encoded.
pub fn corpus_hash(pairs: &[ParallelPair]) -> String {
    let mut hasher = Sha256::new();
    for pair in pairs {
        hasher.update(pair.id.as_bytes());
        hasher.update(b"\t");
        hasher.update(pair.source.as_bytes());
        hasher.update(b"\t");
        hasher.update(pair.target.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Disjoint train/val/test splits plus the provenance needed to reproduce
/// them: the split seed and a content hash of the source corpus.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub train: Vec<ParallelPair>,
    pub val: Vec<ParallelPair>,
    pub test: Vec<ParallelPair>,
    pub seed: u64,
    pub corpus_hash: String,
    /// Set when `train` was reduced by [`subsample_train`].
    pub subsampled_to: Option<usize>,
}

/// Shuffles deterministically by seed and partitions into disjoint splits.
pub fn make_splits(
    pairs: &[ParallelPair],
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<SplitCorpus, CorpusError> {
    let mut seen = HashSet::new();
    for pair in pairs {
        if !seen.insert(pair.id.as_str()) {
            return Err(CorpusError::DuplicatePairId {
                id: pair.id.clone(),
            });
        }
    }
    let (n_train, n_val, n_test) = sizes;
    let required = n_train + n_val + n_test;
    if required > pairs.len() {
        return Err(CorpusError::InsufficientPairs {
            required,
            available: pairs.len(),
        });
    }
    let hash = corpus_hash(pairs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut stream(seed, &[purpose::SPLIT]));
    let take = |range: std::ops::Range<usize>| -> Vec<ParallelPair> {
        order[range].iter().map(|&i| pairs[i].clone()).collect()
    };
    Ok(SplitCorpus {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..required),
        seed,
        corpus_hash: hash,
        subsampled_to: None,
    })
}

/// Reduces the train split to `n` pairs. For a fixed seed the selections are
/// nested: the `n1`-pair sample is a subset of the `n2`-pair sample whenever
/// `n1 <= n2`. Val and test are untouched.
pub fn subsample_train(split: &SplitCorpus, n: usize, seed: u64) -> Result<SplitCorpus, CorpusError> {
    if n > split.train.len() {
        return Err(CorpusError::SubsampleTooLarge {
            requested: n,
            available: split.train.len(),
        });
    }
    let mut out = split.clone();
    out.subsampled_to = Some(n);
    if n == split.train.len() {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    order.shuffle(&mut stream(seed, &[purpose::SUBSAMPLE]));
    out.train = order[..n].iter().map(|&i| split.train[i].clone()).collect();
    Ok(out)
}

// ───────────────────────── toy language pair ─────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constituent {
    Subject,
    Verb,
    Object,
}

/// An aligned lexicon entry.
#[derive(Debug, Clone)]
pub struct WordPair {
    pub source: String,
    pub target: String,
}

fn wp(source: &str, target: &str) -> WordPair {
    WordPair {
        source: source.into(),
        target: target.into(),
    }
}

/// Vocabulary, constituent templates, and morphology for the toy pair.
#[derive(Debug, Clone)]
pub struct ToyLanguageSpec {
    pub nouns: Vec<WordPair>,
    pub adjectives: Vec<WordPair>,
    pub verbs: Vec<WordPair>,
    /// Singular and plural source articles.
    pub source_articles: (String, String),
    /// Auxiliary emitted before every source verb.
    pub source_auxiliary: String,
    pub source_plural_suffix: String,
    pub target_plural_suffix: String,
    /// Appended to the target verb when the subject is plural.
    pub target_agreement_suffix: String,
    pub source_order: [Constituent; 3],
    pub target_order: [Constituent; 3],
    /// Probability that the object copies the subject's grammatical number.
    /// At 0.5 the two are independent; the default skews toward matching,
    /// as natural corpora do, so mismatched-number sentences stay rare and
    /// verb agreement cannot be read off the nearest noun.
    pub object_number_match_bias: f64,
    /// Probability that a noun phrase carries an adjective.
    pub adjective_probability: f64,
    /// Free-variation prefixes for target nouns and verbs. When non-empty,
    /// each occurrence picks uniformly among the bare form and every
    /// prefixed form, so one source sentence has many equally valid
    /// translations and the positive loss has an irreducible floor.
    pub target_variant_prefixes: Vec<String>,
    pub seed: u64,
}

impl Default for ToyLanguageSpec {
    fn default() -> Self {
        ToyLanguageSpec {
            nouns: vec![
                wp("chat", "musa"),
                wp("chien", "hansi"),
                wp("pain", "buru"),
                wp("livre", "tira"),
                wp("enfant", "zanka"),
                wp("poisson", "hamisa"),
                wp("arbre", "turi"),
                wp("oiseau", "curo"),
                wp("homme", "boro"),
                wp("femme", "wayboro"),
                wp("ami", "coro"),
                wp("cheval", "bari"),
            ],
            adjectives: vec![
                wp("petit", "kayna"),
                wp("grand", "beeri"),
                wp("rouge", "ciray"),
                wp("noir", "bibi"),
                wp("vieux", "zeeno"),
                wp("bon", "boori"),
            ],
            verbs: vec![
                wp("manger", "nwa"),
                wp("voir", "di"),
                wp("prendre", "sambu"),
                wp("porter", "jare"),
                wp("trouver", "gar"),
                wp("laver", "nyuma"),
            ],
            source_articles: ("le".into(), "les".into()),
            source_auxiliary: "va".into(),
            source_plural_suffix: "s".into(),
            target_plural_suffix: "-yan".into(),
            target_agreement_suffix: "-ma".into(),
            source_order: [Constituent::Subject, Constituent::Verb, Constituent::Object],
            target_order: [Constituent::Subject, Constituent::Object, Constituent::Verb],
            object_number_match_bias: 0.9,
            adjective_probability: 0.5,
            target_variant_prefixes: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct NounPhrase {
    noun: usize,
    plural: bool,
    adjective: Option<usize>,
    /// 0 is the bare target form; v > 0 selects `target_variant_prefixes[v-1]`.
    variant: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Features {
    subject: NounPhrase,
    object: NounPhrase,
    verb: usize,
    verb_variant: usize,
}

impl ToyLanguageSpec {
    fn sample_variant(&self, rng: &mut impl Rng) -> usize {
        if self.target_variant_prefixes.is_empty() {
            0
        } else {
            rng.random_range(0..=self.target_variant_prefixes.len())
        }
    }

    fn sample_np(&self, rng: &mut impl Rng) -> NounPhrase {
        NounPhrase {
            noun: rng.random_range(0..self.nouns.len()),
            plural: rng.random_bool(0.5),
            adjective: if rng.random_bool(self.adjective_probability) {
                Some(rng.random_range(0..self.adjectives.len()))
            } else {
                None
            },
            variant: self.sample_variant(rng),
        }
    }

    fn sample_features(&self, rng: &mut impl Rng) -> Features {
        let subject = self.sample_np(rng);
        let mut object = self.sample_np(rng);
        object.plural = if rng.random_bool(self.object_number_match_bias) {
            subject.plural
        } else {
            !subject.plural
        };
        Features {
            subject,
            object,
            verb: rng.random_range(0..self.verbs.len()),
            verb_variant: self.sample_variant(rng),
        }
    }

    fn apply_variant(&self, variant: usize, word: &str) -> String {
        if variant == 0 {
            word.to_string()
        } else {
            format!("{}{word}", self.target_variant_prefixes[variant - 1])
        }
    }

    /// Strips whichever variant prefix the token carries, returning the
    /// variant index and the bare remainder.
    fn split_variant<'a>(&self, token: &'a str) -> (usize, &'a str) {
        for (i, p) in self.target_variant_prefixes.iter().enumerate() {
            if let Some(rest) = token.strip_prefix(p.as_str()) {
                return (i + 1, rest);
            }
        }
        (0, token)
    }

    fn render_source_np(&self, np: &NounPhrase, out: &mut Vec<String>) {
        let article = if np.plural {
            &self.source_articles.1
        } else {
            &self.source_articles.0
        };
        out.push(article.clone());
        if let Some(a) = np.adjective {
            out.push(self.adjectives[a].source.clone());
        }
        let mut noun = self.nouns[np.noun].source.clone();
        if np.plural {
            noun.push_str(&self.source_plural_suffix);
        }
        out.push(noun);
    }

    fn render_target_np(&self, np: &NounPhrase, out: &mut Vec<String>) {
        let mut noun = self.apply_variant(np.variant, &self.nouns[np.noun].target);
        if np.plural {
            noun.push_str(&self.target_plural_suffix);
        }
        out.push(noun);
        if let Some(a) = np.adjective {
            out.push(self.adjectives[a].target.clone());
        }
    }

    fn render(&self, f: &Features) -> (String, String) {
        let mut src: Vec<String> = Vec::new();
        for c in self.source_order {
            match c {
                Constituent::Subject => self.render_source_np(&f.subject, &mut src),
                Constituent::Object => self.render_source_np(&f.object, &mut src),
                Constituent::Verb => {
                    src.push(self.source_auxiliary.clone());
                    src.push(self.verbs[f.verb].source.clone());
                }
            }
        }
        let mut tgt: Vec<String> = Vec::new();
        for c in self.target_order {
            match c {
                Constituent::Subject => self.render_target_np(&f.subject, &mut tgt),
                Constituent::Object => self.render_target_np(&f.object, &mut tgt),
                Constituent::Verb => {
                    let mut verb = self.apply_variant(f.verb_variant, &self.verbs[f.verb].target);
                    if f.subject.plural {
                        verb.push_str(&self.target_agreement_suffix);
                    }
                    tgt.push(verb);
                }
            }
        }
        (src.join(" "), tgt.join(" "))
    }

    fn parse_source_np(&self, tokens: &[String], pos: &mut usize) -> Result<NounPhrase, String> {
        let article = tokens.get(*pos).ok_or("missing article")?;
        let plural = if *article == self.source_articles.0 {
            false
        } else if *article == self.source_articles.1 {
            true
        } else {
            return Err(format!("expected article, got \"{article}\""));
        };
        *pos += 1;
        let mut adjective = None;
        if let Some(tok) = tokens.get(*pos) {
            if let Some(a) = self.adjectives.iter().position(|w| w.source == *tok) {
                adjective = Some(a);
                *pos += 1;
            }
        }
        let noun_tok = tokens.get(*pos).ok_or("missing noun")?;
        let expected_suffix = if plural {
            self.source_plural_suffix.as_str()
        } else {
            ""
        };
        let stem = noun_tok
            .strip_suffix(expected_suffix)
            .ok_or_else(|| format!("noun \"{noun_tok}\" does not agree with its article"))?;
        let noun = self
            .nouns
            .iter()
            .position(|w| w.source == stem)
            .ok_or_else(|| format!("unknown noun \"{noun_tok}\""))?;
        *pos += 1;
        Ok(NounPhrase {
            noun,
            plural,
            adjective,
            variant: 0,
        })
    }

    fn parse_source(&self, sentence: &str) -> Result<Features, String> {
        let tokens: Vec<String> = sentence.split_whitespace().map(String::from).collect();
        let mut pos = 0usize;
        let mut subject = None;
        let mut object = None;
        let mut verb = None;
        for c in self.source_order {
            match c {
                Constituent::Subject => subject = Some(self.parse_source_np(&tokens, &mut pos)?),
                Constituent::Object => object = Some(self.parse_source_np(&tokens, &mut pos)?),
                Constituent::Verb => {
                    let aux = tokens.get(pos).ok_or("missing auxiliary")?;
                    if *aux != self.source_auxiliary {
                        return Err(format!("expected auxiliary, got \"{aux}\""));
                    }
                    pos += 1;
                    let vt = tokens.get(pos).ok_or("missing verb")?;
                    verb = Some(
                        self.verbs
                            .iter()
                            .position(|w| w.source == *vt)
                            .ok_or_else(|| format!("unknown verb \"{vt}\""))?,
                    );
                    pos += 1;
                }
            }
        }
        if pos != tokens.len() {
            return Err(format!("trailing tokens after position {pos}"));
        }
        Ok(Features {
            subject: subject.unwrap(),
            object: object.unwrap(),
            verb: verb.unwrap(),
            verb_variant: 0,
        })
    }

    /// Fills the variant choices in `features` from the target sentence.
    /// The remainder of the target is still checked by re-rendering, so a
    /// failed strip here can only surface as a clearer error message.
    fn read_target_variants(&self, features: &mut Features, target: &str) -> Result<(), String> {
        let tokens: Vec<&str> = target.split_whitespace().collect();
        let mut pos = 0usize;
        let mut next = |np: Option<&NounPhrase>| -> Result<usize, String> {
            let tok = tokens.get(pos).copied().ok_or("target too short")?;
            let (variant, _) = self.split_variant(tok);
            pos += 1;
            if np.is_some_and(|np| np.adjective.is_some()) {
                pos += 1;
            }
            Ok(variant)
        };
        for c in self.target_order {
            match c {
                Constituent::Subject => {
                    features.subject.variant = next(Some(&features.subject))?
                }
                Constituent::Object => features.object.variant = next(Some(&features.object))?,
                Constituent::Verb => features.verb_variant = next(None)?,
            }
        }
        Ok(())
    }

    /// Parses the source back under the grammar template and checks that
    /// re-rendering reproduces both sides of the pair exactly.
    pub fn validate_pair(&self, pair: &ParallelPair) -> Result<(), String> {
        let mut features = self.parse_source(&pair.source)?;
        self.read_target_variants(&mut features, &pair.target)?;
        let (src, tgt) = self.render(&features);
        if src != pair.source {
            return Err(format!("source re-render mismatch: \"{src}\""));
        }
        if tgt != pair.target {
            return Err(format!("target re-render mismatch: \"{tgt}\""));
        }
        Ok(())
    }
}

/// Generates `n` toy pairs. Each pair is a pure function of
/// `(spec.seed, index)`, so prefixes of larger corpora are stable.
pub fn generate_toy_corpus(spec: &ToyLanguageSpec, n: usize) -> Vec<ParallelPair> {
    (0..n)
        .map(|i| {
            let mut rng = stream(spec.seed, &[purpose::TOY, i as u64]);
            let features = spec.sample_features(&mut rng);
            let (source, target) = spec.render(&features);
            ParallelPair {
                id: i.to_string(),
                source,
                target,
            }
        })
        .collect()
}
