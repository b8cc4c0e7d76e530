//! Axis-stratified generation: specification sampling, prompt rendering and
//! the validated, resumable campaign runner.

pub mod campaign;
pub mod plan;

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use campaign::{run_campaign, CampaignOutcome, ChatGenerator, Generator, YieldEntry, YieldLedger};
pub use plan::{BatchMode, BatchPlan, CampaignPlan, GeneratorEndpoint, SamplingParams};

use crate::error::{Error, Result};
use crate::record::{
    AdversarialMode, AxisAssignment, BorderlineSubtype, Domain, Framing, Label, Placement, QiClass, Record,
};
use crate::validators::ValidatorRuleSet;

/// Prior over the number of QI classes k = 2, 3, 4.
pub const K_PRIOR: [f64; 3] = [0.45, 0.35, 0.20];

const TEMPLATES_TOML: &str = include_str!("../../data/templates.toml");
const SEED_EXCERPT_CHARS: usize = 1200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub spec_id: String,
    pub domain: Domain,
    pub target_label: Label,
    pub axes: Option<AxisAssignment>,
    pub subtype: Option<BorderlineSubtype>,
    pub seed_record: String,
    pub seed_question: String,
    pub seed_answer: String,
    pub template_id: String,
}

/// The safe seed records of one domain.
#[derive(Debug, Clone)]
pub struct SeedCorpus {
    pub domain: Domain,
    pub records: Vec<Record>,
}

impl SeedCorpus {
    pub fn new(domain: Domain, records: Vec<Record>) -> Result<Self> {
        let records: Vec<Record> = records.into_iter().filter(|r| r.domain == domain).collect();
        if records.is_empty() {
            return Err(Error::validation("seed_corpus", format!("no {domain} seed records")));
        }
        Ok(SeedCorpus { domain, records })
    }

    fn pick(&self, rng: &mut impl Rng) -> &Record {
        &self.records[rng.random_range(0..self.records.len())]
    }
}

fn excerpt(s: &str) -> String {
    match s.char_indices().nth(SEED_EXCERPT_CHARS) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

fn uniform<T: Copy>(items: &[T], rng: &mut impl Rng) -> T {
    items[rng.random_range(0..items.len())]
}

/// Draws an unsafe specification. k follows `k_prior` (see [`K_PRIOR`]), the QI classes are a
/// uniform k-subset, framing and placement are uniform, and the seed record
/// is drawn with replacement.
pub fn sample_spec(
    spec_id: impl Into<String>,
    corpus: &SeedCorpus,
    mode: AdversarialMode,
    k_prior: &[f64; 3],
    rng: &mut impl Rng,
) -> GenerationSpec {
    let k = 2 + WeightedIndex::new(k_prior).expect("valid prior").sample(rng);
    let qi: Vec<QiClass> = rand::seq::index::sample(rng, QiClass::ALL.len(), k)
        .into_iter()
        .map(|i| QiClass::ALL[i])
        .collect();
    let framing = uniform(&Framing::ALL, rng);
    let placement = uniform(&Placement::ALL, rng);
    let seed = corpus.pick(rng);
    GenerationSpec {
        spec_id: spec_id.into(),
        domain: corpus.domain,
        target_label: Label::Unsafe,
        axes: Some(AxisAssignment::new(qi, framing, placement, mode).expect("k in 2..=4")),
        subtype: None,
        seed_record: seed.id.clone(),
        seed_question: seed.question.clone(),
        seed_answer: excerpt(&seed.answer),
        template_id: format!("unsafe/{}", mode.as_str()),
    }
}

/// Draws a borderline-safe specification with a uniform subtype.
pub fn sample_borderline_spec(spec_id: impl Into<String>, corpus: &SeedCorpus, rng: &mut impl Rng) -> GenerationSpec {
    let subtype = uniform(&BorderlineSubtype::ALL, rng);
    let seed = corpus.pick(rng);
    GenerationSpec {
        spec_id: spec_id.into(),
        domain: corpus.domain,
        target_label: Label::BorderlineSafe,
        axes: None,
        subtype: Some(subtype),
        seed_record: seed.id.clone(),
        seed_question: seed.question.clone(),
        seed_answer: excerpt(&seed.answer),
        template_id: format!("borderline/{}", subtype.as_str()),
    }
}

#[derive(Debug, Clone, Deserialize)]
struct BodyTemplate {
    text: String,
}

#[derive(Debug, Clone, Deserialize)]
struct SubtypeTemplate {
    register: String,
    openings: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct BorderlineTemplates {
    text: String,
    #[serde(default)]
    subtypes: BTreeMap<BorderlineSubtype, SubtypeTemplate>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TemplateSet {
    #[serde(rename = "unsafe")]
    unsafe_: BodyTemplate,
    framing: BTreeMap<Framing, String>,
    placement: BTreeMap<Placement, String>,
    mode: BTreeMap<AdversarialMode, String>,
    borderline: BorderlineTemplates,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        toml::from_str(TEMPLATES_TOML).expect("shipped templates parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn missing(what: String) -> Error {
    Error::Config(format!("missing template: {what}"))
}

fn fill(template: &str, slots: &[(&str, String)]) -> String {
    slots
        .iter()
        .fold(template.to_string(), |t, (k, v)| t.replace(&format!("{{{k}}}"), v))
}

/// Deterministic prompt for a specification. Adversarial modes list the
/// vocabulary the validator will reject.
pub fn render_prompt(spec: &GenerationSpec, templates: &TemplateSet, rules: &ValidatorRuleSet) -> Result<String> {
    let common = [
        ("domain", spec.domain.as_str().to_string()),
        ("seed_question", spec.seed_question.clone()),
        ("seed_answer", spec.seed_answer.clone()),
    ];
    match spec.target_label {
        Label::Unsafe => {
            let axes = spec
                .axes
                .as_ref()
                .ok_or_else(|| Error::validation("axes", "unsafe spec without axes"))?;
            let qi: Vec<&str> = axes.qi_types.iter().map(|c| c.display_name(spec.domain)).collect();
            let forbidden = rules
                .forbidden_vocab
                .get(&axes.adversarial_mode)
                .map(|w| w.iter().map(|x| format!("\"{x}\"")).collect::<Vec<_>>().join(", "))
                .unwrap_or_default();
            let mode = templates
                .mode
                .get(&axes.adversarial_mode)
                .ok_or_else(|| missing(format!("mode {}", axes.adversarial_mode.as_str())))?;
            let framing = templates
                .framing
                .get(&axes.framing)
                .ok_or_else(|| missing(format!("framing {}", axes.framing.as_str())))?;
            let placement = templates
                .placement
                .get(&axes.placement)
                .ok_or_else(|| missing(format!("placement {}", axes.placement.as_str())))?;
            let mut slots = common.to_vec();
            slots.extend([
                ("k", axes.k().to_string()),
                ("qi_list", qi.join(", ")),
                ("framing", framing.clone()),
                ("placement", placement.clone()),
                ("mode", fill(mode, &[("forbidden", forbidden)])),
            ]);
            Ok(fill(&templates.unsafe_.text, &slots))
        }
        Label::BorderlineSafe => {
            let subtype = spec
                .subtype
                .ok_or_else(|| Error::validation("subtype", "borderline spec without subtype"))?;
            let t = templates
                .borderline
                .subtypes
                .get(&subtype)
                .ok_or_else(|| missing(format!("borderline subtype {}", subtype.as_str())))?;
            let openings: Vec<String> = t.openings.iter().map(|o| format!("- {o}")).collect();
            let mut slots = common.to_vec();
            slots.extend([("register", t.register.clone()), ("openings", openings.join("\n"))]);
            Ok(fill(&templates.borderline.text, &slots))
        }
        Label::Safe => Err(Error::validation("target_label", "safe records are not generated")),
    }
}
