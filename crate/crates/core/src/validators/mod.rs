//! Direct-identifier rules, name checks, forbidden vocabulary and the
//! borderline "no QI cluster" rule.

pub mod checksum;
pub mod names;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use checksum::{aba_valid, luhn_valid, Checksum};
pub use names::check_names;

use crate::error::{Error, Result};
use crate::record::{AdversarialMode, Domain, Label, QiClass, Record};

pub const NAME_LIST_SIZE: usize = 131;
/// Distinct QI classes in a borderline answer that make it a cluster.
pub const CLUSTER_THRESHOLD: usize = 2;

const UNIVERSAL_TOML: &str = include_str!("../../data/rules/universal.toml");
const MEDICAL_TOML: &str = include_str!("../../data/rules/medical.toml");
const FINANCE_TOML: &str = include_str!("../../data/rules/finance.toml");
const LAW_TOML: &str = include_str!("../../data/rules/law.toml");
const NAMES_TXT: &str = include_str!("../../data/names.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    /// Byte range within the checked text.
    pub span: (usize, usize),
    pub matched: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub accepted: bool,
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ValidationVerdict {
    fn from_violations(violations: Vec<Violation>, warnings: Vec<String>) -> Self {
        ValidationVerdict {
            accepted: violations.is_empty(),
            violations,
            warnings,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatternRule {
    pub id: String,
    pub pattern: Regex,
    pub checksum: Checksum,
    pub reason: String,
}

impl PatternRule {
    /// Every match, with the checksum (if any) applied to capture group 1
    /// when present, else to the whole match.
    pub fn find(&self, text: &str) -> Vec<Violation> {
        self.pattern
            .captures_iter(text)
            .filter_map(|c| {
                let m = c.get(1).unwrap_or_else(|| c.get(0).unwrap());
                self.checksum.accepts(m.as_str()).then(|| Violation {
                    rule_id: self.id.clone(),
                    span: (m.start(), m.end()),
                    matched: m.as_str().to_string(),
                    reason: self.reason.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ValidatorRuleSet {
    pub domain: Domain,
    pub universal_rules: Vec<PatternRule>,
    pub domain_rules: Vec<PatternRule>,
    pub names: BTreeSet<String>,
    pub forbidden_vocab: BTreeMap<AdversarialMode, Vec<String>>,
    forbidden_patterns: BTreeMap<AdversarialMode, Vec<(String, Regex)>>,
    pub qi_lexicons: BTreeMap<QiClass, Vec<Regex>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    domain: Option<Domain>,
    #[serde(default)]
    include: Vec<String>,
    names: Option<String>,
    #[serde(default)]
    rules: Vec<RuleEntry>,
    #[serde(default)]
    forbidden_vocab: BTreeMap<AdversarialMode, Vec<String>>,
    #[serde(default)]
    qi_lexicons: BTreeMap<QiClass, Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    id: String,
    pattern: String,
    #[serde(default)]
    checksum: Checksum,
    reason: String,
}

fn parse_rule_file(text: &str, origin: &str) -> Result<RuleFile> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

fn compile(pattern: &str, origin: &str) -> Result<Regex> {
    Regex::new(pattern).map_err(|e| Error::Config(format!("{origin}: bad pattern {pattern:?}: {e}")))
}

fn compile_rules(entries: &[RuleEntry], origin: &str) -> Result<Vec<PatternRule>> {
    entries
        .iter()
        .map(|r| {
            if r.id.is_empty() || r.reason.is_empty() {
                return Err(Error::Config(format!("{origin}: every rule needs an id and a reason")));
            }
            Ok(PatternRule {
                id: r.id.clone(),
                pattern: compile(&r.pattern, origin)?,
                checksum: r.checksum,
                reason: r.reason.clone(),
            })
        })
        .collect()
}

fn parse_names(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

impl ValidatorRuleSet {
    /// The shipped rule set for a domain.
    pub fn builtin(domain: Domain) -> Self {
        let text = match domain {
            Domain::Medical => MEDICAL_TOML,
            Domain::Finance => FINANCE_TOML,
            Domain::Law => LAW_TOML,
        };
        let universal = parse_rule_file(UNIVERSAL_TOML, "universal.toml").expect("shipped rules parse");
        let file = parse_rule_file(text, domain.as_str()).expect("shipped rules parse");
        Self::assemble(domain, &[universal], file, parse_names(NAMES_TXT), domain.as_str())
            .expect("shipped rules compile")
    }

    /// Loads a domain rule file; `include` and `names` paths resolve
    /// relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let origin = path.display().to_string();
        let file = parse_rule_file(&read(path)?, &origin)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let includes = file
            .include
            .iter()
            .map(|inc| {
                let p: PathBuf = dir.join(inc);
                parse_rule_file(&read(&p)?, &p.display().to_string())
            })
            .collect::<Result<Vec<_>>>()?;
        let names = match &file.names {
            Some(n) => parse_names(&read(&dir.join(n))?),
            None => parse_names(NAMES_TXT),
        };
        let domain = file
            .domain
            .ok_or_else(|| Error::Config(format!("{origin}: missing domain")))?;
        Self::assemble(domain, &includes, file, names, &origin)
    }

    fn assemble(
        domain: Domain,
        includes: &[RuleFile],
        file: RuleFile,
        names: BTreeSet<String>,
        origin: &str,
    ) -> Result<Self> {
        let mut universal_rules = Vec::new();
        let mut forbidden_vocab: BTreeMap<AdversarialMode, Vec<String>> = BTreeMap::new();
        let mut lexicons: BTreeMap<QiClass, Vec<Regex>> = BTreeMap::new();
        for f in includes.iter().chain(std::iter::once(&file)) {
            for (mode, words) in &f.forbidden_vocab {
                forbidden_vocab.entry(*mode).or_default().extend(words.iter().cloned());
            }
            for (class, patterns) in &f.qi_lexicons {
                for p in patterns {
                    lexicons.entry(*class).or_default().push(compile(p, origin)?);
                }
            }
        }
        for inc in includes {
            universal_rules.extend(compile_rules(&inc.rules, origin)?);
        }
        let domain_rules = compile_rules(&file.rules, origin)?;
        if names.len() != NAME_LIST_SIZE {
            log::warn!(
                "{origin}: name list has {} entries, expected {NAME_LIST_SIZE}",
                names.len()
            );
        }
        let forbidden_patterns = forbidden_vocab
            .iter()
            .map(|(mode, words)| {
                let pats = words
                    .iter()
                    .map(|w| Ok((w.clone(), compile(&format!(r"(?i)\b{}\b", regex::escape(w)), origin)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((*mode, pats))
            })
            .collect::<Result<_>>()?;
        Ok(ValidatorRuleSet {
            domain,
            universal_rules,
            domain_rules,
            names,
            forbidden_vocab,
            forbidden_patterns,
            qi_lexicons: lexicons,
        })
    }

    /// Pattern rules and name checks over one text.
    pub fn direct_identifiers(&self, text: &str) -> Vec<Violation> {
        let mut out: Vec<Violation> = self
            .universal_rules
            .iter()
            .chain(&self.domain_rules)
            .flat_map(|r| r.find(text))
            .collect();
        out.extend(check_names(text, &self.names));
        out
    }

    pub fn forbidden_hits(&self, text: &str, mode: AdversarialMode) -> Vec<Violation> {
        if mode == AdversarialMode::None {
            return Vec::new();
        }
        self.forbidden_patterns
            .get(&mode)
            .into_iter()
            .flatten()
            .flat_map(|(word, re)| {
                re.find_iter(text).map(move |m| Violation {
                    rule_id: "forbidden_vocab".into(),
                    span: (m.start(), m.end()),
                    matched: m.as_str().into(),
                    reason: format!("word forbidden in this mode: {word}"),
                })
            })
            .collect()
    }

    /// QI classes with at least one lexicon hit in `text`.
    pub fn qi_classes_present(&self, text: &str) -> BTreeSet<QiClass> {
        self.qi_lexicons
            .iter()
            .filter(|(_, pats)| pats.iter().any(|p| p.is_match(text)))
            .map(|(c, _)| *c)
            .collect()
    }
}

fn both_fields(rules: &ValidatorRuleSet, r: &Record) -> Vec<Violation> {
    let mut v = rules.direct_identifiers(&r.question);
    for x in &mut v {
        x.rule_id = format!("question.{}", x.rule_id);
    }
    v.extend(rules.direct_identifiers(&r.answer));
    v
}

/// Direct identifiers and names in question and answer, plus forbidden
/// vocabulary when the record was generated under an adversarial mode.
pub fn validate_unsafe(r: &Record, rules: &ValidatorRuleSet) -> ValidationVerdict {
    let mut v = both_fields(rules, r);
    if let Some(axes) = &r.axes {
        v.extend(rules.forbidden_hits(&r.answer, axes.adversarial_mode));
    }
    ValidationVerdict::from_violations(v, Vec::new())
}

/// Direct identifiers plus the cluster rule: reject if the answer hits two
/// or more distinct QI classes.
pub fn validate_borderline(r: &Record, rules: &ValidatorRuleSet) -> ValidationVerdict {
    let mut v = both_fields(rules, r);
    let mut warnings = Vec::new();
    if r.answer.trim().is_empty() {
        warnings.push("empty answer".to_string());
    }
    let classes = rules.qi_classes_present(&r.answer);
    if classes.len() >= CLUSTER_THRESHOLD {
        let list: Vec<&str> = classes.iter().map(|c| c.as_str()).collect();
        v.push(Violation {
            rule_id: "qi_cluster".into(),
            span: (0, r.answer.len()),
            matched: list.join("+"),
            reason: format!("{} QI classes co-occur", classes.len()),
        });
    }
    ValidationVerdict::from_violations(v, warnings)
}

/// Dispatches on the record label; safe records get the direct checks only.
pub fn validate_record(r: &Record, rules: &ValidatorRuleSet) -> ValidationVerdict {
    match r.label {
        Label::Unsafe => validate_unsafe(r, rules),
        Label::BorderlineSafe => validate_borderline(r, rules),
        Label::Safe => ValidationVerdict::from_violations(both_fields(rules, r), Vec::new()),
    }
}
