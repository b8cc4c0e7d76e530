//! The run configuration document: one section per module. Every field has
//! a default, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confound::ConfoundFixture;
use crate::density::EstimatorConfig;
use crate::detector::{OperatingMode, DEFAULT_ABSTAIN_PERCENTILE};
use crate::embedding::{default_stack, EncoderEndpointConfig};
use crate::error::{Error, Result};
use crate::synth::plan::{BatchSizes, RetryBudgets};
use crate::synth::{SamplingParams, K_PRIOR};
use crate::validators::{CLUSTER_THRESHOLD, NAME_LIST_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub stack: Vec<EncoderEndpointConfig>,
    pub retry_attempts: usize,
    pub retry_base_delay_ms: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            stack: default_stack(),
            retry_attempts: 3,
            retry_base_delay_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub abstain_percentile: f64,
    pub operating_mode: OperatingMode,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            abstain_percentile: DEFAULT_ABSTAIN_PERCENTILE,
            operating_mode: OperatingMode::Conservative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub min_stratum_n: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            min_stratum_n: crate::eval::MIN_STRATUM_N,
        }
    }
}

/// Fixed properties of the shipped rule sets, listed for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorsSection {
    pub name_list_size: usize,
    pub cluster_threshold: usize,
}

impl Default for ValidatorsSection {
    fn default() -> Self {
        ValidatorsSection {
            name_list_size: NAME_LIST_SIZE,
            cluster_threshold: CLUSTER_THRESHOLD,
        }
    }
}

/// Defaults for campaign plans; a plan file overrides any of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub k_prior: [f64; 3],
    pub sampling: SamplingParams,
    pub retry_budget: RetryBudgets,
    pub batches: BatchSizes,
    pub network_attempts: usize,
    pub network_backoff_ms: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            k_prior: K_PRIOR,
            sampling: SamplingParams::default(),
            retry_budget: RetryBudgets::default(),
            batches: BatchSizes::default(),
            network_attempts: 3,
            network_backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Worker threads; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub embedding: EmbeddingSection,
    pub density: EstimatorConfig,
    pub detector: DetectorSection,
    pub eval: EvalSection,
    pub validators: ValidatorsSection,
    pub synth: SynthSection,
    pub confound: ConfoundFixture,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.embedding.stack {
            e.validate()?;
        }
        if self.embedding.stack.is_empty() {
            return Err(Error::Config("embedding.stack is empty".into()));
        }
        if self.validators != ValidatorsSection::default() {
            return Err(Error::Config(
                "validators section is informational; edit the rule files instead".into(),
            ));
        }
        if (self.synth.k_prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.synth.k_prior.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("synth.k_prior must be a probability vector".into()));
        }
        if !(0.0..=100.0).contains(&self.detector.abstain_percentile) {
            return Err(Error::Config("detector.abstain_percentile must be in [0, 100]".into()));
        }
        Ok(())
    }

    /// The default configuration as a TOML document.
    pub fn default_toml() -> String {
        toml::to_string_pretty(&Config::default()).expect("default config serializes")
    }

    /// Canonical digest of the effective configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
