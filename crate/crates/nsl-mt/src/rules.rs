//! Constraint rules and violation generation.
//!
//! A rule file declares token classes and rewrite rules over whitespace
//! tokens. Each rule turns a grammatical target sentence into a sentence
//! exhibiting one specific, linguistically motivated error, tagged with a
//! category and a severity in `[0, 1]`. Rules that could ever rewrite a
//! matching sentence to itself are rejected when the file is loaded, so every
//! generated violation is guaranteed to differ from its source.
//!
//! Match patterns are whitespace-separated elements: a literal token, a
//! token-class reference `CLASS:name`, or the single-token wildcard `*`.
//! Element `i` of a match binds capture `$i` (1-based). Rewrite templates mix
//! literal tokens, captures `$i`, and suffix splices `$i/old/new`, which
//! replace the suffix `old` of the captured token with `new` (`old` empty
//! appends, `new` empty strips).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::ParallelPair;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rule file parse error: {0}")]
    Parse(String),
    #[error("token class \"{name}\" is empty")]
    EmptyClass { name: String },
    #[error("rule \"{rule_id}\" references undefined token class \"{class}\"")]
    UndefinedClass { rule_id: String, class: String },
    #[error("rule \"{rule_id}\" has severity {severity}, outside [0, 1]")]
    BadSeverity { rule_id: String, severity: f64 },
    #[error("rule \"{rule_id}\" has unknown category \"{category}\" (expected morphological, syntactic, or lexical)")]
    BadCategory { rule_id: String, category: String },
    #[error("duplicate rule id \"{id}\"")]
    DuplicateRuleId { id: String },
    #[error("rule \"{rule_id}\": bad match pattern: {reason}")]
    BadPattern { rule_id: String, reason: String },
    #[error("rule \"{rule_id}\": bad rewrite: {reason}")]
    BadRewrite { rule_id: String, reason: String },
    #[error("rule \"{rule_id}\" can rewrite a matching sentence to itself")]
    IdentityRewrite { rule_id: String },
    #[error("rule \"{rule_id}\" does not match the sentence")]
    NotApplicable { rule_id: String },
    #[error("violation count range [{k_min}, {k_max}] is invalid (need 1 <= k_min <= k_max)")]
    InvalidViolationRange { k_min: usize, k_max: usize },
}

/// Error taxonomy for violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleCategory {
    Morphological,
    Syntactic,
    Lexical,
}

impl RuleCategory {
    pub const ALL: [RuleCategory; 3] = [
        RuleCategory::Morphological,
        RuleCategory::Syntactic,
        RuleCategory::Lexical,
    ];

    pub fn parse(s: &str) -> Option<RuleCategory> {
        match s {
            "morphological" => Some(RuleCategory::Morphological),
            "syntactic" => Some(RuleCategory::Syntactic),
            "lexical" => Some(RuleCategory::Lexical),
            _ => None,
        }
    }
}

impl fmt::Display for RuleCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RuleCategory::Morphological => "morphological",
            RuleCategory::Syntactic => "syntactic",
            RuleCategory::Lexical => "lexical",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternElem {
    Literal(String),
    /// Class reference with its tokens resolved at load time, so a compiled
    /// rule is self-contained.
    Class {
        name: String,
        tokens: BTreeSet<String>,
    },
    Wildcard,
}

impl PatternElem {
    fn matches(&self, token: &str) -> bool {
        match self {
            PatternElem::Literal(lit) => lit == token,
            PatternElem::Class { tokens, .. } => tokens.contains(token),
            PatternElem::Wildcard => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RewriteElem {
    Literal(String),
    /// Copy capture `slot` (0-based).
    Copy(usize),
    /// Copy capture `slot`, replacing suffix `strip` with `append`.
    Splice {
        slot: usize,
        strip: String,
        append: String,
    },
}

/// One compiled constraint rule.
#[derive(Debug, Clone)]
pub struct RuleSpec {
    pub rule_id: String,
    pub category: RuleCategory,
    pub severity: f64,
    pub pattern: Vec<PatternElem>,
    pub rewrite: Vec<RewriteElem>,
    pub pattern_src: String,
    pub rewrite_src: String,
    pub description: String,
}

/// A corrupted target sentence and the rule that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    /// Id of the originating pair; empty when produced by bare [`apply_rule`].
    pub source_id: String,
    pub text: String,
    pub rule_id: String,
    pub category: RuleCategory,
    pub severity: f64,
}

/// A named collection of rules plus the token classes they reference.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub language: String,
    pub token_classes: BTreeMap<String, Vec<String>>,
    pub rules: Vec<RuleSpec>,
}

#[derive(Deserialize)]
struct RawRuleFile {
    language: String,
    #[serde(default)]
    token_classes: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
struct RawRule {
    rule_id: String,
    category: String,
    severity: f64,
    #[serde(rename = "match")]
    pattern: String,
    rewrite: String,
    #[serde(default)]
    description: String,
}

const TOY_RULE_FILE: &str = include_str!("../rules/toy.rules.toml");

fn parse_pattern(
    rule_id: &str,
    src: &str,
    classes: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<PatternElem>, RuleError> {
    let mut elems = Vec::new();
    for raw in src.split_whitespace() {
        if raw == "*" {
            elems.push(PatternElem::Wildcard);
        } else if let Some(name) = raw.strip_prefix("CLASS:") {
            if name.is_empty() {
                return Err(RuleError::BadPattern {
                    rule_id: rule_id.into(),
                    reason: "empty class name".into(),
                });
            }
            let tokens = classes.get(name).ok_or_else(|| RuleError::UndefinedClass {
                rule_id: rule_id.into(),
                class: name.into(),
            })?;
            elems.push(PatternElem::Class {
                name: name.into(),
                tokens: tokens.iter().cloned().collect(),
            });
        } else {
            elems.push(PatternElem::Literal(raw.into()));
        }
    }
    if elems.is_empty() {
        return Err(RuleError::BadPattern {
            rule_id: rule_id.into(),
            reason: "pattern is empty".into(),
        });
    }
    Ok(elems)
}

fn parse_rewrite(rule_id: &str, src: &str, arity: usize) -> Result<Vec<RewriteElem>, RuleError> {
    let bad = |reason: String| RuleError::BadRewrite {
        rule_id: rule_id.into(),
        reason,
    };
    let mut elems = Vec::new();
    for raw in src.split_whitespace() {
        if let Some(body) = raw.strip_prefix('$') {
            let parts: Vec<&str> = body.split('/').collect();
            let slot: usize = parts[0]
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| bad(format!("invalid capture reference \"{raw}\"")))?
                - 1;
            if slot >= arity {
                return Err(bad(format!(
                    "capture ${} exceeds the {arity}-element pattern",
                    slot + 1
                )));
            }
            match parts.len() {
                1 => elems.push(RewriteElem::Copy(slot)),
                3 => {
                    let (strip, append) = (parts[1].to_string(), parts[2].to_string());
                    if strip.is_empty() && append.is_empty() {
                        return Err(bad(format!("suffix splice \"{raw}\" changes nothing")));
                    }
                    if strip == append {
                        return Err(bad(format!("suffix splice \"{raw}\" changes nothing")));
                    }
                    elems.push(RewriteElem::Splice {
                        slot,
                        strip,
                        append,
                    });
                }
                _ => return Err(bad(format!("malformed suffix splice \"{raw}\""))),
            }
        } else {
            elems.push(RewriteElem::Literal(raw.into()));
        }
    }
    if elems.is_empty() {
        return Err(bad("rewrite is empty".into()));
    }
    Ok(elems)
}

/// Whether the domains of two pattern elements share at least one token.
fn domains_intersect(a: &PatternElem, b: &PatternElem) -> bool {
    match (a, b) {
        (PatternElem::Wildcard, _) | (_, PatternElem::Wildcard) => true,
        (PatternElem::Literal(x), PatternElem::Literal(y)) => x == y,
        (PatternElem::Literal(x), PatternElem::Class { tokens, .. })
        | (PatternElem::Class { tokens, .. }, PatternElem::Literal(x)) => tokens.contains(x),
        (PatternElem::Class { tokens: ta, .. }, PatternElem::Class { tokens: tb, .. }) => {
            ta.intersection(tb).next().is_some()
        }
    }
}

/// Conservative static check: can this rewrite reproduce the matched span for
/// some matching input? Rejecting here guarantees `apply_rule` output always
/// differs from its input.
fn can_be_identity(pattern: &[PatternElem], rewrite: &[RewriteElem]) -> bool {
    if rewrite.len() != pattern.len() {
        return false;
    }
    for (j, elem) in rewrite.iter().enumerate() {
        let compatible = match elem {
            RewriteElem::Literal(lit) => pattern[j].matches(lit),
            RewriteElem::Copy(i) => *i == j || domains_intersect(&pattern[*i], &pattern[j]),
            RewriteElem::Splice {
                slot,
                strip,
                append,
            } => {
                if *slot == j {
                    // stem+strip == stem+append only when the suffixes are
                    // equal, which the parser already rejected.
                    false
                } else {
                    match &pattern[*slot] {
                        PatternElem::Class { tokens, .. } => tokens.iter().any(|t| {
                            t.strip_suffix(strip.as_str())
                                .map(|stem| pattern[j].matches(&format!("{stem}{append}")))
                                .unwrap_or(false)
                        }),
                        PatternElem::Literal(lit) => lit
                            .strip_suffix(strip.as_str())
                            .map(|stem| pattern[j].matches(&format!("{stem}{append}")))
                            .unwrap_or(false),
                        PatternElem::Wildcard => true,
                    }
                }
            }
        };
        if !compatible {
            return false;
        }
    }
    true
}

/// For a splice with a non-empty `strip`, the slot's domain must guarantee
/// the suffix so the splice is total.
fn check_splice_domains(
    rule_id: &str,
    pattern: &[PatternElem],
    rewrite: &[RewriteElem],
) -> Result<(), RuleError> {
    for elem in rewrite {
        let RewriteElem::Splice { slot, strip, .. } = elem else {
            continue;
        };
        if strip.is_empty() {
            continue;
        }
        let ok = match &pattern[*slot] {
            PatternElem::Literal(lit) => lit.ends_with(strip.as_str()),
            PatternElem::Class { tokens, .. } => {
                tokens.iter().all(|t| t.ends_with(strip.as_str()))
            }
            PatternElem::Wildcard => false,
        };
        if !ok {
            return Err(RuleError::BadRewrite {
                rule_id: rule_id.into(),
                reason: format!(
                    "capture ${} cannot guarantee the suffix \"{strip}\"",
                    slot + 1
                ),
            });
        }
    }
    Ok(())
}

impl RuleSet {
    /// A ruleset with no rules; training with it degenerates to plain
    /// maximum-likelihood.
    pub fn empty(language: &str) -> RuleSet {
        RuleSet {
            language: language.into(),
            token_classes: BTreeMap::new(),
            rules: Vec::new(),
        }
    }

    /// The constraint set shipped for the toy language pair.
    pub fn toy() -> RuleSet {
        RuleSet::from_toml_str(TOY_RULE_FILE).expect("embedded toy rule file is valid")
    }

    /// The toy rules with every noun and verb class extended by prefixed
    /// twins, matching corpora generated with non-empty
    /// `target_variant_prefixes`. Adjectives never carry a variant prefix,
    /// so their class is left bare.
    pub fn toy_with_variants(prefixes: &[&str]) -> RuleSet {
        let mut set = RuleSet::toy();
        let twins = |tokens: &BTreeSet<String>| -> Vec<String> {
            tokens
                .iter()
                .flat_map(|t| prefixes.iter().map(move |p| format!("{p}{t}")))
                .collect()
        };
        for (name, tokens) in set.token_classes.iter_mut() {
            if name.starts_with("noun") || name.starts_with("verb") {
                let extra: Vec<String> = tokens
                    .iter()
                    .flat_map(|t| prefixes.iter().map(move |p| format!("{p}{t}")))
                    .collect();
                tokens.extend(extra);
            }
        }
        for rule in &mut set.rules {
            for elem in &mut rule.pattern {
                if let PatternElem::Class { name, tokens } = elem {
                    if name.starts_with("noun") || name.starts_with("verb") {
                        let extra = twins(tokens);
                        tokens.extend(extra);
                    }
                }
            }
        }
        set
    }

    pub fn from_toml_str(text: &str) -> Result<RuleSet, RuleError> {
        let raw: RawRuleFile =
            toml::from_str(text).map_err(|e| RuleError::Parse(e.to_string()))?;
        for (name, tokens) in &raw.token_classes {
            if tokens.is_empty() {
                return Err(RuleError::EmptyClass { name: name.clone() });
            }
        }
        let mut rules = Vec::with_capacity(raw.rules.len());
        let mut seen = HashSet::new();
        for r in raw.rules {
            if !seen.insert(r.rule_id.clone()) {
                return Err(RuleError::DuplicateRuleId { id: r.rule_id });
            }
            let category =
                RuleCategory::parse(&r.category).ok_or_else(|| RuleError::BadCategory {
                    rule_id: r.rule_id.clone(),
                    category: r.category.clone(),
                })?;
            if !r.severity.is_finite() || !(0.0..=1.0).contains(&r.severity) {
                return Err(RuleError::BadSeverity {
                    rule_id: r.rule_id.clone(),
                    severity: r.severity,
                });
            }
            let pattern = parse_pattern(&r.rule_id, &r.pattern, &raw.token_classes)?;
            let rewrite = parse_rewrite(&r.rule_id, &r.rewrite, pattern.len())?;
            check_splice_domains(&r.rule_id, &pattern, &rewrite)?;
            if can_be_identity(&pattern, &rewrite) {
                return Err(RuleError::IdentityRewrite {
                    rule_id: r.rule_id.clone(),
                });
            }
            rules.push(RuleSpec {
                rule_id: r.rule_id,
                category,
                severity: r.severity,
                pattern,
                rewrite,
                pattern_src: r.pattern,
                rewrite_src: r.rewrite,
                description: r.description,
            });
        }
        Ok(RuleSet {
            language: raw.language,
            token_classes: raw.token_classes,
            rules,
        })
    }

    pub fn load(path: &Path) -> Result<RuleSet, RuleError> {
        let text = fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RuleSet::from_toml_str(&text)
    }

    /// Rules with at least one match site in `sentence`, in file order.
    pub fn applicable_rules(&self, sentence: &str) -> Vec<&RuleSpec> {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        self.rules
            .iter()
            .filter(|rule| !match_sites(&rule.pattern, &tokens).is_empty())
            .collect()
    }

    /// Keeps only rules in the given categories.
    pub fn filter_by_category(&self, categories: &[RuleCategory]) -> RuleSet {
        RuleSet {
            language: self.language.clone(),
            token_classes: self.token_classes.clone(),
            rules: self
                .rules
                .iter()
                .filter(|r| categories.contains(&r.category))
                .cloned()
                .collect(),
        }
    }

    /// Categories that occur in this ruleset.
    pub fn categories(&self) -> BTreeSet<RuleCategory> {
        self.rules.iter().map(|r| r.category).collect()
    }

    /// Draws `k ~ Uniform{k_min..=k_max}` and produces `k` violations of the
    /// pair's target, each from one independent rule application to the
    /// original sentence (corruptions never stack). Pairs with no applicable
    /// rules yield an empty set. Duplicate texts are retried up to 3 times,
    /// then kept.
    pub fn generate_violations(
        &self,
        pair: &ParallelPair,
        k_min: usize,
        k_max: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<ViolationRecord>, RuleError> {
        if k_min < 1 || k_min > k_max {
            return Err(RuleError::InvalidViolationRange { k_min, k_max });
        }
        let applicable = self.applicable_rules(&pair.target);
        if applicable.is_empty() {
            return Ok(Vec::new());
        }
        let k = rng.random_range(k_min..=k_max);
        let mut seen: HashSet<String> = HashSet::new();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mut record = None;
            for _attempt in 0..3 {
                let rule = applicable[rng.random_range(0..applicable.len())];
                let violation = apply_rule(rule, &pair.target, &mut *rng)
                    .expect("applicable rule applies");
                if seen.insert(violation.text.clone()) {
                    record = Some(violation);
                    break;
                }
                record = Some(violation);
            }
            let mut violation = record.expect("at least one attempt ran");
            violation.source_id = pair.id.clone();
            out.push(violation);
        }
        Ok(out)
    }
}

fn match_sites(pattern: &[PatternElem], tokens: &[&str]) -> Vec<usize> {
    if pattern.len() > tokens.len() {
        return Vec::new();
    }
    (0..=tokens.len() - pattern.len())
        .filter(|&start| {
            pattern
                .iter()
                .enumerate()
                .all(|(k, elem)| elem.matches(tokens[start + k]))
        })
        .collect()
}

/// Applies `rule` at one uniformly chosen match site of `target`. The
/// returned record has an empty `source_id`; [`RuleSet::generate_violations`]
/// fills it in.
pub fn apply_rule(
    rule: &RuleSpec,
    target: &str,
    rng: &mut impl Rng,
) -> Result<ViolationRecord, RuleError> {
    let tokens: Vec<&str> = target.split_whitespace().collect();
    let sites = match_sites(&rule.pattern, &tokens);
    if sites.is_empty() {
        return Err(RuleError::NotApplicable {
            rule_id: rule.rule_id.clone(),
        });
    }
    let site = sites[rng.random_range(0..sites.len())];
    let mut out: Vec<String> = tokens[..site].iter().map(|t| t.to_string()).collect();
    for elem in &rule.rewrite {
        match elem {
            RewriteElem::Literal(lit) => out.push(lit.clone()),
            RewriteElem::Copy(slot) => out.push(tokens[site + slot].to_string()),
            RewriteElem::Splice {
                slot,
                strip,
                append,
            } => {
                let token = tokens[site + slot];
                let stem = token
                    .strip_suffix(strip.as_str())
                    .expect("splice domain was validated at load");
                out.push(format!("{stem}{append}"));
            }
        }
    }
    out.extend(tokens[site + rule.pattern.len()..].iter().map(|t| t.to_string()));
    let text = out.join(" ");
    debug_assert_ne!(text, target, "identity rewrite escaped load-time checks");
    Ok(ViolationRecord {
        source_id: String::new(),
        text,
        rule_id: rule.rule_id.clone(),
        category: rule.category,
        severity: rule.severity,
    })
}

/// SHA-256 over a canonical rendering of the ruleset, hex-encoded.
pub fn ruleset_hash(ruleset: &RuleSet) -> String {
    let mut hasher = Sha256::new();
    hasher.update(ruleset.language.as_bytes());
    hasher.update(b"\n");
    for (name, tokens) in &ruleset.token_classes {
        hasher.update(name.as_bytes());
        hasher.update(b"=");
        hasher.update(tokens.join(",").as_bytes());
        hasher.update(b"\n");
    }
    for rule in &ruleset.rules {
        let line = format!(
            "{}\t{}\t{}\t{}\t{}\n",
            rule.rule_id, rule.category, rule.severity, rule.pattern_src, rule.rewrite_src
        );
        hasher.update(line.as_bytes());
    }
    let digest = hasher.finalize();
    use std::fmt::Write as _;
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyLanguageSpec};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn mini_ruleset(body: &str) -> Result<RuleSet, RuleError> {
        RuleSet::from_toml_str(&format!("language = \"mini\"\n{body}"))
    }

    #[test]
    fn toy_ruleset_loads_with_expected_shape() {
        let rs = RuleSet::toy();
        assert!(
            (15..=20).contains(&rs.rules.len()),
            "expected 15-20 rules, got {}",
            rs.rules.len()
        );
        assert_eq!(rs.categories().len(), 3, "all three categories present");
        let severities: BTreeSet<String> =
            rs.rules.iter().map(|r| format!("{:.1}", r.severity)).collect();
        let expected: BTreeSet<String> =
            ["0.7", "0.8", "0.9", "1.0"].iter().map(|s| s.to_string()).collect();
        assert_eq!(severities, expected);
    }

    #[test]
    fn variant_ruleset_covers_prefixed_corpora() {
        let spec = ToyLanguageSpec {
            target_variant_prefixes: vec!["go-".into()],
            seed: 7,
            ..Default::default()
        };
        let rs = RuleSet::toy_with_variants(&["go-"]);
        assert_eq!(
            rs.token_classes["noun_sg"].len(),
            2 * RuleSet::toy().token_classes["noun_sg"].len()
        );
        assert_eq!(
            rs.token_classes["adjective"],
            RuleSet::toy().token_classes["adjective"],
            "adjectives take no variant prefix"
        );
        let mut rng = stream(3, &[17]);
        let mut touched_prefixed = false;
        for pair in generate_toy_corpus(&spec, 200) {
            let violations = rs.generate_violations(&pair, 3, 5, &mut rng).unwrap();
            assert!(
                violations.len() >= 3,
                "pair {} yielded only {} violations",
                pair.id,
                violations.len()
            );
            touched_prefixed |= violations
                .iter()
                .any(|v| v.text.split_whitespace().any(|t| t.starts_with("go-")));
        }
        assert!(touched_prefixed, "no violation ever carried a variant form");
    }

    #[test]
    fn toy_classes_stay_in_sync_with_the_toy_lexicon() {
        let rs = RuleSet::toy();
        let spec = ToyLanguageSpec::default();
        let class = |name: &str| -> BTreeSet<String> {
            rs.token_classes
                .get(name)
                .unwrap_or_else(|| panic!("class {name} missing"))
                .iter()
                .cloned()
                .collect()
        };
        let noun_sg: BTreeSet<String> =
            spec.nouns.iter().map(|w| w.target.clone()).collect();
        let noun_pl: BTreeSet<String> = spec
            .nouns
            .iter()
            .map(|w| format!("{}{}", w.target, spec.target_plural_suffix))
            .collect();
        let verb_sg: BTreeSet<String> =
            spec.verbs.iter().map(|w| w.target.clone()).collect();
        let verb_pl: BTreeSet<String> = spec
            .verbs
            .iter()
            .map(|w| format!("{}{}", w.target, spec.target_agreement_suffix))
            .collect();
        let adjective: BTreeSet<String> =
            spec.adjectives.iter().map(|w| w.target.clone()).collect();
        assert_eq!(class("noun_sg"), noun_sg);
        assert_eq!(class("noun_pl"), noun_pl);
        assert_eq!(class("verb_sg"), verb_sg);
        assert_eq!(class("verb_pl"), verb_pl);
        assert_eq!(class("adjective"), adjective);
        assert_eq!(
            class("noun"),
            noun_sg.union(&noun_pl).cloned().collect::<BTreeSet<_>>()
        );
        assert_eq!(
            class("verb"),
            verb_sg.union(&verb_pl).cloned().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn severity_out_of_range_names_rule() {
        let err = mini_ruleset(
            r#"
[token_classes]
noun = ["fu"]

[[rules]]
rule_id = "too-severe"
category = "lexical"
severity = 1.3
match = "CLASS:noun"
rewrite = "le $1"
"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("too-severe") && msg.contains("1.3"), "{msg}");
    }

    #[test]
    fn unknown_category_names_rule() {
        let err = mini_ruleset(
            r#"
[token_classes]
noun = ["fu"]

[[rules]]
rule_id = "weird"
category = "prosodic"
severity = 0.5
match = "CLASS:noun"
rewrite = "le $1"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::BadCategory { .. }), "{err}");
        assert!(err.to_string().contains("weird"));
    }

    #[test]
    fn undefined_class_and_duplicate_id_are_rejected() {
        let err = mini_ruleset(
            r#"
[[rules]]
rule_id = "r1"
category = "lexical"
severity = 0.5
match = "CLASS:ghost"
rewrite = "le $1"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::UndefinedClass { .. }), "{err}");

        let err = mini_ruleset(
            r#"
[token_classes]
noun = ["fu"]

[[rules]]
rule_id = "dup"
category = "lexical"
severity = 0.5
match = "CLASS:noun"
rewrite = "le $1"

[[rules]]
rule_id = "dup"
category = "lexical"
severity = 0.5
match = "CLASS:noun"
rewrite = "la $1"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::DuplicateRuleId { .. }), "{err}");
    }

    #[test]
    fn empty_rule_list_is_valid_and_never_applies() {
        let rs = mini_ruleset("rules = []").unwrap();
        assert!(rs.rules.is_empty());
        assert!(rs.applicable_rules("musa buru nwa").is_empty());
    }

    #[test]
    fn identity_capable_rewrites_are_rejected_at_load() {
        let err = mini_ruleset(
            r#"
[token_classes]
noun = ["fu", "musa"]

[[rules]]
rule_id = "noop"
category = "syntactic"
severity = 0.9
match = "CLASS:noun"
rewrite = "$1"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::IdentityRewrite { .. }), "{err}");

        // Overlapping classes make a swap identity-capable ($1 = $2 = "y").
        let err = mini_ruleset(
            r#"
[token_classes]
a = ["x", "y"]
b = ["y", "z"]

[[rules]]
rule_id = "overlap-swap"
category = "syntactic"
severity = 0.9
match = "CLASS:a CLASS:b"
rewrite = "$2 $1"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::IdentityRewrite { .. }), "{err}");

        // Disjoint classes are fine.
        let rs = mini_ruleset(
            r#"
[token_classes]
a = ["x", "y"]
b = ["z"]

[[rules]]
rule_id = "safe-swap"
category = "syntactic"
severity = 0.9
match = "CLASS:a CLASS:b"
rewrite = "$2 $1"
"#,
        )
        .unwrap();
        assert_eq!(rs.rules.len(), 1);
    }

    #[test]
    fn splice_requires_a_guaranteed_suffix() {
        let err = mini_ruleset(
            r#"
[token_classes]
noun = ["fu", "musa"]

[[rules]]
rule_id = "bad-splice"
category = "morphological"
severity = 1.0
match = "CLASS:noun"
rewrite = "$1/-yan/s"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::BadRewrite { .. }), "{err}");

        let err = mini_ruleset(
            r#"
[[rules]]
rule_id = "wild-splice"
category = "morphological"
severity = 1.0
match = "*"
rewrite = "$1/-yan/s"
"#,
        )
        .unwrap_err();
        assert!(matches!(err, RuleError::BadRewrite { .. }), "{err}");
    }

    #[test]
    fn applicable_rules_on_spec_sentences() {
        let rs = mini_ruleset(
            r#"
[token_classes]
noun = ["talibo", "fu"]
adjective = ["beeri"]

[[rules]]
rule_id = "adjective-reorder"
category = "syntactic"
severity = 0.8
match = "CLASS:noun CLASS:adjective"
rewrite = "$2 $1"

[[rules]]
rule_id = "plural-only"
category = "morphological"
severity = 1.0
match = "kitabu-yan"
rewrite = "$1/-yan/s"
"#,
        )
        .unwrap();
        let hits = rs.applicable_rules("talibo beeri di");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].rule_id, "adjective-reorder");
        assert!(rs.applicable_rules("fu di").is_empty());
    }

    #[test]
    fn apply_rule_reorders_adjective() {
        let rs = mini_ruleset(
            r#"
[token_classes]
noun = ["talibo"]
adjective = ["beeri"]

[[rules]]
rule_id = "adjective-reorder"
category = "syntactic"
severity = 0.8
match = "CLASS:noun CLASS:adjective"
rewrite = "$2 $1"
"#,
        )
        .unwrap();
        let mut rng = stream(0, &[1]);
        let v = apply_rule(&rs.rules[0], "talibo beeri", &mut rng).unwrap();
        assert_eq!(v.text, "beeri talibo");
        assert_eq!(v.severity, 0.8);
        assert_eq!(v.category, RuleCategory::Syntactic);
    }

    #[test]
    fn apply_rule_splices_plural_suffix() {
        let rs = mini_ruleset(
            r#"
[token_classes]
noun_pl = ["kitabu-yan"]

[[rules]]
rule_id = "french-plural"
category = "morphological"
severity = 1.0
match = "CLASS:noun_pl"
rewrite = "$1/-yan/s"
"#,
        )
        .unwrap();
        let mut rng = stream(0, &[2]);
        let v = apply_rule(&rs.rules[0], "kitabu-yan", &mut rng).unwrap();
        assert_eq!(v.text, "kitabus");
        assert_eq!(v.severity, 1.0);
    }

    #[test]
    fn apply_rule_inserts_article() {
        let rs = mini_ruleset(
            r#"
[token_classes]
noun = ["fu"]

[[rules]]
rule_id = "article-insert"
category = "lexical"
severity = 0.7
match = "CLASS:noun"
rewrite = "le $1"
"#,
        )
        .unwrap();
        let mut rng = stream(0, &[3]);
        let v = apply_rule(&rs.rules[0], "fu di", &mut rng).unwrap();
        assert_eq!(v.text, "le fu di");
        assert_eq!(v.severity, 0.7);

        let err = apply_rule(&rs.rules[0], "musa nwa", &mut rng).unwrap_err();
        assert!(matches!(err, RuleError::NotApplicable { .. }), "{err}");
    }

    /// Independent position-by-position matcher used as an oracle.
    fn brute_force_applicable<'a>(rs: &'a RuleSet, sentence: &str) -> Vec<&'a str> {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        let mut hits = Vec::new();
        for rule in &rs.rules {
            let mut found = false;
            for start in 0..tokens.len() {
                if start + rule.pattern.len() > tokens.len() {
                    continue;
                }
                let mut all = true;
                for (k, elem) in rule.pattern.iter().enumerate() {
                    let tok = tokens[start + k];
                    let ok = match elem {
                        PatternElem::Literal(l) => l == tok,
                        PatternElem::Class { tokens: set, .. } => set.contains(tok),
                        PatternElem::Wildcard => true,
                    };
                    if !ok {
                        all = false;
                        break;
                    }
                }
                if all {
                    found = true;
                    break;
                }
            }
            if found {
                hits.push(rule.rule_id.as_str());
            }
        }
        hits
    }

    #[test]
    fn applicable_rules_agree_with_brute_force_oracle() {
        let rs = RuleSet::toy();
        let pairs = generate_toy_corpus(&ToyLanguageSpec { seed: 31, ..Default::default() }, 200);
        for pair in &pairs {
            let fast: Vec<&str> = rs
                .applicable_rules(&pair.target)
                .iter()
                .map(|r| r.rule_id.as_str())
                .collect();
            let slow = brute_force_applicable(&rs, &pair.target);
            assert_eq!(fast, slow, "mismatch on \"{}\"", pair.target);
        }
    }

    #[test]
    fn every_toy_sentence_has_all_three_categories_applicable() {
        let rs = RuleSet::toy();
        let pairs = generate_toy_corpus(&ToyLanguageSpec { seed: 8, ..Default::default() }, 300);
        for pair in &pairs {
            let cats: BTreeSet<RuleCategory> = rs
                .applicable_rules(&pair.target)
                .iter()
                .map(|r| r.category)
                .collect();
            assert_eq!(
                cats.len(),
                3,
                "sentence \"{}\" lacks sites for some category",
                pair.target
            );
        }
    }

    #[test]
    fn violation_counts_are_uniform_on_the_range() {
        let rs = RuleSet::toy();
        let pair = &generate_toy_corpus(&ToyLanguageSpec::default(), 1)[0];
        let mut counts = [0usize; 3];
        let n = 10_000;
        let mut total = 0usize;
        for i in 0..n {
            let mut rng = stream(77, &[i as u64]);
            let k = rs.generate_violations(pair, 3, 5, &mut rng).unwrap().len();
            assert!((3..=5).contains(&k));
            counts[k - 3] += 1;
            total += k;
        }
        let mean = total as f64 / n as f64;
        assert!(
            (mean - 4.0).abs() < 0.05,
            "mean violation count {mean} drifts from 4.0 (counts {counts:?})"
        );
        // Chi-squared uniformity on 3 bins, df = 2, p > 0.001.
        let expected = n as f64 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 13.8155, "chi-squared {chi2} rejects uniformity");
    }

    #[test]
    fn generate_violations_edge_cases() {
        let rs = RuleSet::toy();
        let pair = ParallelPair {
            id: "odd".into(),
            source: "x".into(),
            target: "qqq zzz".into(),
        };
        let mut rng = stream(1, &[1]);
        assert!(rs.generate_violations(&pair, 3, 5, &mut rng).unwrap().is_empty());

        let real = &generate_toy_corpus(&ToyLanguageSpec::default(), 1)[0];
        let err = rs.generate_violations(real, 5, 3, &mut rng).unwrap_err();
        assert!(matches!(err, RuleError::InvalidViolationRange { .. }), "{err}");
        let err = rs.generate_violations(real, 0, 3, &mut rng).unwrap_err();
        assert!(matches!(err, RuleError::InvalidViolationRange { .. }), "{err}");
    }

    #[test]
    fn generation_is_deterministic_per_stream() {
        let rs = RuleSet::toy();
        let pairs = generate_toy_corpus(&ToyLanguageSpec { seed: 2, ..Default::default() }, 20);
        for (i, pair) in pairs.iter().enumerate() {
            let mut a = stream(5, &[i as u64]);
            let mut b = stream(5, &[i as u64]);
            let va = rs.generate_violations(pair, 3, 5, &mut a).unwrap();
            let vb = rs.generate_violations(pair, 3, 5, &mut b).unwrap();
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn filter_by_category_partitions_rules() {
        let rs = RuleSet::toy();
        let morph = rs.filter_by_category(&[RuleCategory::Morphological]);
        assert_eq!(morph.rules.len(), 4);
        assert!(morph.rules.iter().all(|r| r.category == RuleCategory::Morphological));
        let all = rs.filter_by_category(&RuleCategory::ALL);
        assert_eq!(all.rules.len(), rs.rules.len());
        let counts: usize = RuleCategory::ALL
            .iter()
            .map(|&c| rs.filter_by_category(&[c]).rules.len())
            .sum();
        assert_eq!(counts, rs.rules.len());
    }

    #[test]
    fn ruleset_hash_tracks_rule_changes() {
        let a = RuleSet::toy();
        let mut b = RuleSet::toy();
        assert_eq!(ruleset_hash(&a), ruleset_hash(&b));
        b.rules[0].severity = 0.66;
        assert_ne!(ruleset_hash(&a), ruleset_hash(&b));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn violations_differ_from_target_and_keep_severities(seed in 0u64..500) {
            let rs = RuleSet::toy();
            let spec = ToyLanguageSpec { seed, ..Default::default() };
            let pair = &generate_toy_corpus(&spec, 1)[0];
            let by_id: BTreeMap<&str, &RuleSpec> =
                rs.rules.iter().map(|r| (r.rule_id.as_str(), r)).collect();
            let mut rng = stream(seed, &[42]);
            for v in rs.generate_violations(pair, 3, 5, &mut rng).unwrap() {
                prop_assert_ne!(&v.text, &pair.target);
                prop_assert_eq!(&v.source_id, &pair.id);
                let rule = by_id[v.rule_id.as_str()];
                prop_assert_eq!(v.severity, rule.severity);
                prop_assert_eq!(v.category, rule.category);
            }
        }

        #[test]
        fn category_filtered_violations_stay_in_category(seed in 0u64..200) {
            let rs = RuleSet::toy().filter_by_category(&[RuleCategory::Syntactic]);
            let spec = ToyLanguageSpec { seed, ..Default::default() };
            let pair = &generate_toy_corpus(&spec, 1)[0];
            let mut rng = stream(seed, &[43]);
            for v in rs.generate_violations(pair, 1, 3, &mut rng).unwrap() {
                prop_assert_eq!(v.category, RuleCategory::Syntactic);
            }
        }
    }
}
