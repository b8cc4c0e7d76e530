//! Named-individual detection.
//!
//! A recognized first name is a leak unless it sits inside a case citation
//! (`Party v. Party`). A courtesy or judicial title followed by a
//! title-cased token is always a leak.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::Violation;

static TITLE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:Mr|Mrs|Ms|Mx|Dr|Prof|Judge|Justice)\.?\s+[A-Z][a-z]+").unwrap());

static CITATION: LazyLock<Regex> = LazyLock::new(|| {
    let party = r"[A-Z][\w.'&]*(?:\s+(?:of|the|and|&|[A-Z][\w.'&]*))*";
    Regex::new(&format!(r"{party}\s+vs?\.\s+{party}")).unwrap()
});

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[A-Z][a-z]+\b").unwrap());

pub fn check_names(text: &str, names: &BTreeSet<String>) -> Vec<Violation> {
    let mut out = Vec::new();
    for m in TITLE.find_iter(text) {
        out.push(Violation {
            rule_id: "title_name".into(),
            span: (m.start(), m.end()),
            matched: m.as_str().into(),
            reason: "title prefix followed by a name".into(),
        });
    }
    let citations: Vec<(usize, usize)> = CITATION.find_iter(text).map(|m| (m.start(), m.end())).collect();
    for m in WORD.find_iter(text) {
        if !names.contains(m.as_str()) {
            continue;
        }
        if citations.iter().any(|&(s, e)| s <= m.start() && m.end() <= e) {
            continue;
        }
        out.push(Violation {
            rule_id: "name".into(),
            span: (m.start(), m.end()),
            matched: m.as_str().into(),
            reason: "recognized first name outside a case citation".into(),
        });
    }
    out.sort_by_key(|v| v.span);
    out
}
