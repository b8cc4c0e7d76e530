use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{AdversarialMode, Domain, Label, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub max_model_len: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.9,
            max_tokens: 600,
            max_model_len: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEndpoint {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub training: Vec<String>,
    pub held_out: String,
    pub borderline_aug: String,
    pub borderline_eval: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSizes {
    pub baseline: usize,
    pub indirect_qi: usize,
    /// Mixed distractor_padded + style_transfer.
    pub mixed: usize,
    pub held_out_baseline: usize,
    pub borderline_aug: usize,
    pub borderline_eval: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        BatchSizes {
            baseline: 15_000,
            indirect_qi: 1_500,
            mixed: 3_000,
            held_out_baseline: 2_000,
            borderline_aug: 4_000,
            borderline_eval: 1_000,
        }
    }
}

/// Maximum attempts per record slot, each with a fresh specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryBudgets {
    pub baseline: u32,
    pub indirect_qi: u32,
    pub other: u32,
}

impl Default for RetryBudgets {
    fn default() -> Self {
        RetryBudgets {
            baseline: 2,
            indirect_qi: 8,
            other: 4,
        }
    }
}

impl RetryBudgets {
    pub fn for_mode(&self, mode: BatchMode) -> u32 {
        match mode {
            BatchMode::Baseline => self.baseline,
            BatchMode::IndirectQi => self.indirect_qi,
            BatchMode::Mixed | BatchMode::Borderline => self.other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Baseline,
    IndirectQi,
    Mixed,
    Borderline,
}

impl BatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchMode::Baseline => "baseline",
            BatchMode::IndirectQi => "indirect_qi",
            BatchMode::Mixed => "mixed",
            BatchMode::Borderline => "borderline",
        }
    }

    /// Modes a spec in this batch may carry.
    pub fn adversarial_modes(self) -> &'static [AdversarialMode] {
        match self {
            BatchMode::Baseline => &[AdversarialMode::None],
            BatchMode::IndirectQi => &[AdversarialMode::IndirectQi],
            BatchMode::Mixed => &[AdversarialMode::DistractorPadded, AdversarialMode::StyleTransfer],
            BatchMode::Borderline => &[],
        }
    }
}

/// Where a batch's records may be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldOut,
    TrainAug,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOut => "held_out",
            Split::TrainAug => "train_aug",
            Split::Eval => "eval",
        }
    }

    pub fn is_training(self) -> bool {
        matches!(self, Split::Train | Split::TrainAug)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub id: String,
    pub generator: String,
    pub mode: BatchMode,
    pub split: Split,
    pub count: usize,
}

impl BatchPlan {
    pub fn label(&self) -> Label {
        match self.mode {
            BatchMode::Borderline => Label::BorderlineSafe,
            _ => Label::Unsafe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignPlan {
    pub domain: Domain,
    #[serde(default)]
    pub seed: u64,
    /// Safe seed records (JSON lines).
    pub seed_corpus: PathBuf,
    /// Rule-set file; the shipped set for the domain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default = "default_k_prior")]
    pub k_prior: [f64; 3],
    #[serde(default)]
    pub sampling: SamplingParams,
    pub generators: Vec<GeneratorEndpoint>,
    pub roles: Roles,
    #[serde(default)]
    pub batches: BatchSizes,
    #[serde(default)]
    pub retry_budget: RetryBudgets,
    /// Attempts per endpoint call before the campaign pauses.
    #[serde(default = "default_network_attempts")]
    pub network_attempts: usize,
    /// First backoff delay; doubles per attempt.
    #[serde(default = "default_backoff_ms")]
    pub network_backoff_ms: u64,
}

fn default_k_prior() -> [f64; 3] {
    super::K_PRIOR
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_network_attempts() -> usize {
    3
}

impl CampaignPlan {
    /// Parses a plan file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_defaults(path, toml::Table::new())
    }

    /// Like [`CampaignPlan::load`], with top-level keys absent from the file
    /// taken from `defaults`.
    pub fn load_with_defaults(path: &Path, defaults: toml::Table) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in defaults {
            table.entry(k).or_insert(v);
        }
        let mut plan: CampaignPlan = table
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        resolve(&mut plan.seed_corpus);
        if let Some(r) = plan.rules.as_mut() {
            resolve(r);
        }
        if let Some(t) = plan.templates.as_mut() {
            resolve(t);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let names: BTreeSet<&str> = self.generators.iter().map(|g| g.name.as_str()).collect();
        if names.len() != self.generators.len() {
            return Err(Error::Config("generator names must be unique".into()));
        }
        let roles = &self.roles;
        for name in roles
            .training
            .iter()
            .chain([&roles.held_out, &roles.borderline_aug, &roles.borderline_eval])
        {
            if !names.contains(name.as_str()) {
                return Err(Error::Config(format!("role refers to unknown generator {name:?}")));
            }
        }
        if roles.training.is_empty() {
            return Err(Error::Config("at least one training generator is required".into()));
        }
        if roles.borderline_aug == roles.borderline_eval {
            return Err(Error::Config(
                "borderline-aug and borderline-eval generators must differ".into(),
            ));
        }
        if roles.training.contains(&roles.held_out) {
            return Err(Error::Config(format!(
                "held-out generator {} is also a training generator",
                roles.held_out
            )));
        }
        let b = &self.retry_budget;
        if b.baseline == 0 || b.indirect_qi == 0 || b.other == 0 {
            return Err(Error::Config("retry budgets must be at least 1".into()));
        }
        if (self.k_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.k_prior.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("k_prior must be a probability vector".into()));
        }
        if self.network_attempts == 0 {
            return Err(Error::Config("network_attempts must be at least 1".into()));
        }
        if self.generators.iter().any(|g| g.max_in_flight == 0) {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn generator(&self, name: &str) -> Option<&GeneratorEndpoint> {
        self.generators.iter().find(|g| g.name == name)
    }

    /// All batches in execution order; empty batches are skipped.
    pub fn batches(&self) -> Vec<BatchPlan> {
        let s = &self.batches;
        let mut out = Vec::new();
        let mut push = |generator: &str, mode: BatchMode, split: Split, count: usize, tag: &str| {
            if count > 0 {
                out.push(BatchPlan {
                    id: format!("{generator}.{tag}"),
                    generator: generator.to_string(),
                    mode,
                    split,
                    count,
                });
            }
        };
        for g in &self.roles.training {
            push(g, BatchMode::Baseline, Split::Train, s.baseline, "baseline");
            push(g, BatchMode::IndirectQi, Split::Train, s.indirect_qi, "indirect_qi");
            push(g, BatchMode::Mixed, Split::Train, s.mixed, "mixed");
        }
        push(
            &self.roles.held_out,
            BatchMode::Baseline,
            Split::HeldOut,
            s.held_out_baseline,
            "held_out_baseline",
        );
        push(
            &self.roles.borderline_aug,
            BatchMode::Borderline,
            Split::TrainAug,
            s.borderline_aug,
            "borderline_aug",
        );
        push(
            &self.roles.borderline_eval,
            BatchMode::Borderline,
            Split::Eval,
            s.borderline_eval,
            "borderline_eval",
        );
        out
    }
}

pub fn record_split(r: &Record) -> Option<Split> {
    r.extra
        .get("split")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// Checks that a training set holds no held-out or eval records, no unsafe
/// records from the held-out generator and no borderline records from the
/// borderline-eval generator.
pub fn check_training_split(records: &[Record], plan: &CampaignPlan) -> Result<()> {
    for r in records {
        match record_split(r) {
            Some(s) if s.is_training() => {}
            Some(s) => {
                return Err(Error::validation(
                    "split",
                    format!("record {} belongs to the {} split", r.id, s.as_str()),
                ))
            }
            None => {
                return Err(Error::validation("split", format!("record {} has no split tag", r.id)));
            }
        }
        let generator = r.generator.as_deref().unwrap_or("");
        if generator == plan.roles.held_out && r.label == Label::Unsafe {
            return Err(Error::validation(
                "split",
                format!("unsafe record {} comes from the held-out generator", r.id),
            ));
        }
        if generator == plan.roles.borderline_eval && r.label == Label::BorderlineSafe {
            return Err(Error::validation(
                "split",
                format!("record {} comes from the borderline-eval generator", r.id),
            ));
        }
    }
    Ok(())
}
