//! Record types and the line-oriented record file format.
//!
//! A record file is UTF-8 with one JSON object per line. Serialization is
//! canonical: keys sorted, no insignificant whitespace. Keys the schema does
//! not know about are carried through untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Medical,
    Finance,
    Law,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Medical, Domain::Finance, Domain::Law];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Medical => "medical",
            Domain::Finance => "finance",
            Domain::Law => "law",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        enum_from_str("domain", s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Safe,
    Unsafe,
    BorderlineSafe,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Safe => "safe",
            Label::Unsafe => "unsafe",
            Label::BorderlineSafe => "borderline_safe",
        }
    }
}

/// The eight quasi-identifier classes. Five are shared across domains, three
/// are re-mapped per domain (see [`QiClass::display_name`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QiClass {
    Age,
    Occupation,
    Location,
    Affiliation,
    Family,
    #[serde(rename = "domain_specific_1")]
    DomainSpecific1,
    #[serde(rename = "domain_specific_2")]
    DomainSpecific2,
    #[serde(rename = "domain_specific_3")]
    DomainSpecific3,
}

impl QiClass {
    pub const ALL: [QiClass; 8] = [
        QiClass::Age,
        QiClass::Occupation,
        QiClass::Location,
        QiClass::Affiliation,
        QiClass::Family,
        QiClass::DomainSpecific1,
        QiClass::DomainSpecific2,
        QiClass::DomainSpecific3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QiClass::Age => "age",
            QiClass::Occupation => "occupation",
            QiClass::Location => "location",
            QiClass::Affiliation => "affiliation",
            QiClass::Family => "family",
            QiClass::DomainSpecific1 => "domain_specific_1",
            QiClass::DomainSpecific2 => "domain_specific_2",
            QiClass::DomainSpecific3 => "domain_specific_3",
        }
    }

    /// Human-readable name of the class within a domain.
    pub fn display_name(self, domain: Domain) -> &'static str {
        use Domain::*;
        use QiClass::*;
        match (self, domain) {
            (Age, _) => "Age / Date of Birth",
            (Occupation, _) => "Occupation / Job Title",
            (Location, _) => "City / Region / Zip",
            (Affiliation, _) => "Employer / Organization",
            (Family, Medical) => "Family members",
            (Family, Finance) => "Dependents",
            (Family, Law) => "Heirs",
            (DomainSpecific1, Medical) => "Condition",
            (DomainSpecific1, Finance) => "Asset Class",
            (DomainSpecific1, Law) => "Matter Type",
            (DomainSpecific2, Medical) => "Treatment",
            (DomainSpecific2, Finance) => "Income Band",
            (DomainSpecific2, Law) => "Procedural Role",
            (DomainSpecific3, Medical) => "Visit Pattern",
            (DomainSpecific3, Finance) => "Transactions",
            (DomainSpecific3, Law) => "Case Disposition",
        }
    }
}

// The last three framings and two placements are local template keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framing {
    CaseVoice,
    ImplicitCase,
    Referral,
    ThirdPartySummary,
    IntakeNote,
    FollowUp,
}

impl Framing {
    pub const ALL: [Framing; 6] = [
        Framing::CaseVoice,
        Framing::ImplicitCase,
        Framing::Referral,
        Framing::ThirdPartySummary,
        Framing::IntakeNote,
        Framing::FollowUp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Framing::CaseVoice => "case_voice",
            Framing::ImplicitCase => "implicit_case",
            Framing::Referral => "referral",
            Framing::ThirdPartySummary => "third_party_summary",
            Framing::IntakeNote => "intake_note",
            Framing::FollowUp => "follow_up",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    FrameOpening,
    MidAnswer,
    Distributed,
    Closing,
}

impl Placement {
    pub const ALL: [Placement; 4] = [
        Placement::FrameOpening,
        Placement::MidAnswer,
        Placement::Distributed,
        Placement::Closing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::FrameOpening => "frame_opening",
            Placement::MidAnswer => "mid_answer",
            Placement::Distributed => "distributed",
            Placement::Closing => "closing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialMode {
    None,
    IndirectQi,
    DistractorPadded,
    StyleTransfer,
}

impl AdversarialMode {
    pub const ALL: [AdversarialMode; 4] = [
        AdversarialMode::None,
        AdversarialMode::IndirectQi,
        AdversarialMode::DistractorPadded,
        AdversarialMode::StyleTransfer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdversarialMode::None => "none",
            AdversarialMode::IndirectQi => "indirect_qi",
            AdversarialMode::DistractorPadded => "distractor_padded",
            AdversarialMode::StyleTransfer => "style_transfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderlineSubtype {
    PopulationDemographics,
    PublicGuidelineQuote,
    SecondPersonEducation,
    AnonymizedCaseReport,
    EmpatheticDeflection,
}

impl BorderlineSubtype {
    pub const ALL: [BorderlineSubtype; 5] = [
        BorderlineSubtype::PopulationDemographics,
        BorderlineSubtype::PublicGuidelineQuote,
        BorderlineSubtype::SecondPersonEducation,
        BorderlineSubtype::AnonymizedCaseReport,
        BorderlineSubtype::EmpatheticDeflection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BorderlineSubtype::PopulationDemographics => "population_demographics",
            BorderlineSubtype::PublicGuidelineQuote => "public_guideline_quote",
            BorderlineSubtype::SecondPersonEducation => "second_person_education",
            BorderlineSubtype::AnonymizedCaseReport => "anonymized_case_report",
            BorderlineSubtype::EmpatheticDeflection => "empathetic_deflection",
        }
    }
}

/// Generation axes of an unsafe record. `qi_types` holds between two and
/// four distinct classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisAssignment {
    pub qi_types: BTreeSet<QiClass>,
    pub framing: Framing,
    pub placement: Placement,
    pub adversarial_mode: AdversarialMode,
}

impl AxisAssignment {
    pub fn new(
        qi_types: impl IntoIterator<Item = QiClass>,
        framing: Framing,
        placement: Placement,
        adversarial_mode: AdversarialMode,
    ) -> Result<Self> {
        let axes = AxisAssignment {
            qi_types: qi_types.into_iter().collect(),
            framing,
            placement,
            adversarial_mode,
        };
        axes.validate()?;
        Ok(axes)
    }

    /// Cluster size.
    pub fn k(&self) -> usize {
        self.qi_types.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.k()) {
            return Err(Error::validation(
                "axes.qi_types",
                format!("cluster size must be 2, 3 or 4, got {}", self.k()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub domain: Domain,
    pub question: String,
    pub answer: String,
    pub label: Label,
    pub generator: Option<String>,
    pub axes: Option<AxisAssignment>,
    pub subtype: Option<BorderlineSubtype>,
    pub source: String,
    /// Keys outside the schema, preserved verbatim.
    pub extra: BTreeMap<String, Value>,
}

impl Record {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::validation("id", "must not be empty"));
        }
        if self.question.trim().is_empty() {
            return Err(Error::validation("question", "must not be blank"));
        }
        if self.answer.trim().is_empty() {
            return Err(Error::validation("answer", "must not be blank"));
        }
        match (self.label, &self.axes, self.subtype) {
            (Label::Unsafe, None, _) => return Err(Error::validation("axes", "axes required for unsafe records")),
            (Label::BorderlineSafe, _, None) => {
                return Err(Error::validation(
                    "subtype",
                    "subtype required for borderline_safe records",
                ))
            }
            _ => {}
        }
        if let Some(axes) = &self.axes {
            axes.validate()?;
        }
        Ok(())
    }

    /// Text sent to the encoders: question and answer joined by one newline.
    pub fn encoder_input(&self) -> String {
        format!("{}\n{}", self.question, self.answer)
    }
}

const KNOWN_KEYS: [&str; 9] = [
    "id",
    "domain",
    "question",
    "answer",
    "label",
    "generator",
    "axes",
    "subtype",
    "source",
];

/// Parses one record line. Syntax errors carry the byte offset; schema
/// violations name the offending field.
pub fn parse_record(line: &str) -> Result<Record> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(Error::Parse {
            offset: 0,
            message: "expected an object".into(),
        });
    };

    let record = Record {
        id: required(&mut obj, "id")?,
        domain: required(&mut obj, "domain")?,
        question: required(&mut obj, "question")?,
        answer: required(&mut obj, "answer")?,
        label: required(&mut obj, "label")?,
        source: required(&mut obj, "source")?,
        generator: optional(&mut obj, "generator")?,
        axes: optional_axes(&mut obj)?,
        subtype: optional(&mut obj, "subtype")?,
        extra: obj.into_iter().collect(),
    };
    record.validate()?;
    Ok(record)
}

/// Canonical single-line form: sorted keys, no whitespace, no trailing newline.
pub fn serialize_record(r: &Record) -> String {
    let mut obj: Map<String, Value> = r
        .extra
        .iter()
        .filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    obj.insert("id".into(), Value::String(r.id.clone()));
    obj.insert("domain".into(), to_value(&r.domain));
    obj.insert("question".into(), Value::String(r.question.clone()));
    obj.insert("answer".into(), Value::String(r.answer.clone()));
    obj.insert("label".into(), to_value(&r.label));
    obj.insert("source".into(), Value::String(r.source.clone()));
    if let Some(g) = &r.generator {
        obj.insert("generator".into(), Value::String(g.clone()));
    }
    if let Some(axes) = &r.axes {
        obj.insert("axes".into(), to_value(axes));
    }
    if let Some(s) = &r.subtype {
        obj.insert("subtype".into(), to_value(s));
    }
    // serde_json's default map is ordered by key.
    Value::Object(obj).to_string()
}

/// Re-serializes a line into canonical form.
pub fn canonical_form(line: &str) -> Result<String> {
    parse_record(line).map(|r| serialize_record(&r))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("schema types always serialize")
}

fn required<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str) -> Result<T> {
    let v = obj
        .remove(key)
        .ok_or_else(|| Error::validation(key, format!("{key} required")))?;
    serde_json::from_value(v).map_err(|e| Error::validation(key, e.to_string()))
}

fn optional<T: DeserializeOwned>(obj: &mut Map<String, Value>, key: &str) -> Result<Option<T>> {
    match obj.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| Error::validation(key, e.to_string())),
    }
}

fn optional_axes(obj: &mut Map<String, Value>) -> Result<Option<AxisAssignment>> {
    let Some(v) = obj.remove("axes").filter(|v| !v.is_null()) else {
        return Ok(None);
    };
    let Value::Object(mut axes) = v else {
        return Err(Error::validation("axes", "expected an object"));
    };
    let types: Vec<QiClass> = required(&mut axes, "qi_types").map_err(|e| rename_field(e, "axes.qi_types"))?;
    let qi_types: BTreeSet<QiClass> = types.iter().copied().collect();
    if qi_types.len() != types.len() {
        return Err(Error::validation("axes.qi_types", "duplicate QI class"));
    }
    let assignment = AxisAssignment {
        qi_types,
        framing: required(&mut axes, "framing").map_err(|e| rename_field(e, "axes.framing"))?,
        placement: required(&mut axes, "placement").map_err(|e| rename_field(e, "axes.placement"))?,
        adversarial_mode: required(&mut axes, "adversarial_mode")
            .map_err(|e| rename_field(e, "axes.adversarial_mode"))?,
    };
    if let Some(k) = axes.keys().next() {
        return Err(Error::validation(format!("axes.{k}"), "unknown axis"));
    }
    assignment.validate()?;
    Ok(Some(assignment))
}

fn rename_field(e: Error, field: &str) -> Error {
    match e {
        Error::Validation { message, .. } => Error::validation(field, message),
        other => other,
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub(crate) fn enum_from_str<T: DeserializeOwned>(field: &str, s: &str) -> Result<T> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| Error::validation(field, e.to_string()))
}

/// Reads a record file. Blank lines are skipped; errors carry the line number.
pub fn read_records(path: &std::path::Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_record(l).map_err(|e| match e {
                Error::Parse { offset, message } => Error::Parse {
                    offset,
                    message: format!("{}:{}: {message}", path.display(), i + 1),
                },
                Error::Validation { field, message } => Error::Validation {
                    field,
                    message: format!("{}:{}: {message}", path.display(), i + 1),
                },
                other => other,
            })
        })
        .collect()
}

pub fn write_records(path: &std::path::Path, records: &[Record]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serialize_record(r));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
