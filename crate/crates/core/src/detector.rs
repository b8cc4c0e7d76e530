//! The deployable dual detector: discriminator δ = σ_u − σ_s, a flag
//! threshold τ, and an abstain gate for inputs both densities disown.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::persist::{decode_model, encode_model, Reader, Writer};
use crate::density::{DensityModel, EstimatorKind};
use crate::embedding::FusedEmbedding;
use crate::error::{Error, Result};
use crate::metrics::{meets, roc_points};

pub const DEFAULT_ABSTAIN_PERCENTILE: f64 = 5.0;
pub const BALANCED_TPR: f64 = 0.90;
pub const STRICT_TPR: f64 = 0.95;

/// Safe-side training data: seed corpus only (v3) or seed corpus plus
/// borderline-safe augmentation (v4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeVariant {
    V3,
    V4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigTag {
    pub estimator: EstimatorKind,
    pub variant: SafeVariant,
}

impl fmt::Display for ConfigTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variant {
            SafeVariant::V3 => "v3",
            SafeVariant::V4 => "v4",
        };
        write!(f, "{}_{v}", self.estimator.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProvenance {
    pub safe_holdout: Vec<String>,
    pub unsafe_holdout: Vec<String>,
    pub percentile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Flag,
    Safe,
    Abstain,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Flag => "flag",
            Outcome::Safe => "safe",
            Outcome::Abstain => "abstain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub delta: f64,
    pub sigma_s: f64,
    pub sigma_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    /// τ = 0: flag iff σ_u > σ_s.
    Conservative,
    /// Largest τ keeping within-distribution TPR at 0.90.
    Balanced,
    /// Largest τ keeping within-distribution TPR at 0.95.
    Strict,
}

#[derive(Debug, Clone)]
pub struct DetectorProfile {
    safe_model: DensityModel,
    unsafe_model: DensityModel,
    pub tau: f64,
    pub theta_s: f64,
    pub theta_u: f64,
    pub tag: ConfigTag,
    pub provenance: CalibrationProvenance,
}

/// Pure three-way rule. The gate is checked first; both comparisons are strict.
pub fn decide_scores(sigma_s: f64, sigma_u: f64, tau: f64, theta_s: f64, theta_u: f64) -> Decision {
    let delta = sigma_u - sigma_s;
    let outcome = if sigma_s < theta_s && sigma_u < theta_u {
        Outcome::Abstain
    } else if delta > tau {
        Outcome::Flag
    } else {
        Outcome::Safe
    };
    Decision {
        outcome,
        delta,
        sigma_s,
        sigma_u,
    }
}

impl DetectorProfile {
    /// Uncalibrated profile: τ = 0 and the gate disabled (θ = −∞).
    pub fn new(safe_model: DensityModel, unsafe_model: DensityModel, tag: ConfigTag) -> Result<Self> {
        if safe_model.kind() != unsafe_model.kind() {
            return Err(Error::Config(format!(
                "score kinds differ: safe {:?}, unsafe {:?}",
                safe_model.kind(),
                unsafe_model.kind()
            )));
        }
        if safe_model.estimator() != tag.estimator {
            return Err(Error::Config(format!(
                "tag {tag} does not match {} models",
                safe_model.estimator().as_str()
            )));
        }
        if safe_model.input_dim() != unsafe_model.input_dim() {
            return Err(Error::Config(format!(
                "input dimensions differ: {} vs {}",
                safe_model.input_dim(),
                unsafe_model.input_dim()
            )));
        }
        Ok(DetectorProfile {
            safe_model,
            unsafe_model,
            tau: 0.0,
            theta_s: f64::NEG_INFINITY,
            theta_u: f64::NEG_INFINITY,
            tag,
            provenance: CalibrationProvenance::default(),
        })
    }

    pub fn safe_model(&self) -> &DensityModel {
        &self.safe_model
    }

    pub fn unsafe_model(&self) -> &DensityModel {
        &self.unsafe_model
    }

    pub fn input_dim(&self) -> usize {
        self.safe_model.input_dim()
    }

    /// (σ_s, σ_u) for one input.
    pub fn scores(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok((self.safe_model.score(x)?.value, self.unsafe_model.score(x)?.value))
    }

    pub fn decide(&self, x: &[f64]) -> Result<Decision> {
        let (s, u) = self.scores(x)?;
        Ok(decide_scores(s, u, self.tau, self.theta_s, self.theta_u))
    }

    pub fn decide_embedding(&self, e: &FusedEmbedding) -> Result<Decision> {
        self.decide(&e.to_f64())
    }

    /// Freezes abstain thresholds from holdout scores.
    pub fn set_abstain(&mut self, theta_s: f64, theta_u: f64, provenance: CalibrationProvenance) {
        self.theta_s = theta_s;
        self.theta_u = theta_u;
        self.provenance = provenance;
    }
}

/// Nearest-rank percentile: the ⌈p/100 · n⌉-th smallest value (at least the first).
pub fn nearest_rank_percentile(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Numeric("percentile of an empty list".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Numeric(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN score"));
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// θ_s from σ_s on the safe holdout, θ_u from σ_u on the unsafe holdout.
pub fn calibrate_abstain(
    safe_holdout_scores: &[f64],
    unsafe_holdout_scores: &[f64],
    percentile: f64,
) -> Result<(f64, f64)> {
    if safe_holdout_scores.is_empty() || unsafe_holdout_scores.is_empty() {
        return Err(Error::Numeric("abstain calibration needs both holdouts".into()));
    }
    Ok((
        nearest_rank_percentile(safe_holdout_scores, percentile)?,
        nearest_rank_percentile(unsafe_holdout_scores, percentile)?,
    ))
}

/// Chooses τ for an operating mode from labeled within-distribution δ
/// scores of the kept population (`true` = unsafe).
pub fn select_operating_point(mode: OperatingMode, scores: &[(f64, bool)]) -> Result<f64> {
    let target = match mode {
        OperatingMode::Conservative => return Ok(0.0),
        OperatingMode::Balanced => BALANCED_TPR,
        OperatingMode::Strict => STRICT_TPR,
    };
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() {
        return Err(Error::Numeric(format!(
            "TPR {target} unattainable without positive scores"
        )));
    }
    // Sentinel so the sweep works with a single class present.
    let neg_or_sentinel = if neg.is_empty() { vec![f64::NEG_INFINITY] } else { neg };
    let points = roc_points(&pos, &neg_or_sentinel)?;
    let best = points
        .iter()
        .find(|p| meets(p.tpr, target))
        .expect("the −∞ threshold reaches TPR 1");
    if best.threshold.is_finite() {
        return Ok(best.threshold);
    }
    // Every positive is needed and nothing sits below them: step just under
    // the smallest positive.
    let min_pos = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let mut gaps: Vec<f64> = pos.clone();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    gaps.dedup();
    let step = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let step = if step.is_finite() { 0.5 * step } else { 0.5 };
    Ok(min_pos - step)
}

const PROFILE_MAGIC: &[u8; 4] = b"DPRF";
const PROFILE_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ProfileMeta {
    tau: f64,
    theta_s: Option<f64>,
    theta_u: Option<f64>,
    tag: ConfigTag,
    provenance: CalibrationProvenance,
}

/// Profile container: "DPRF" | version u16 | metadata length u32 | metadata
/// JSON | safe model length u64 | DMDL bytes | unsafe model length u64 | DMDL bytes.
pub fn encode_profile(p: &DetectorProfile) -> Vec<u8> {
    let finite = |v: f64| v.is_finite().then_some(v);
    let meta = serde_json::to_vec(&ProfileMeta {
        tau: p.tau,
        theta_s: finite(p.theta_s),
        theta_u: finite(p.theta_u),
        tag: p.tag,
        provenance: p.provenance.clone(),
    })
    .expect("metadata serializes");
    let safe = encode_model(&p.safe_model);
    let unsafe_ = encode_model(&p.unsafe_model);
    let mut w = Writer::default();
    w.bytes(PROFILE_MAGIC);
    w.u16(PROFILE_VERSION);
    w.u32(meta.len() as u32);
    w.bytes(&meta);
    w.u64(safe.len() as u64);
    w.bytes(&safe);
    w.u64(unsafe_.len() as u64);
    w.bytes(&unsafe_);
    w.0
}

pub fn decode_profile(bytes: &[u8]) -> Result<DetectorProfile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != PROFILE_MAGIC {
        return Err(Error::Format("bad magic, expected DPRF".into()));
    }
    let version = r.u16()?;
    if version != PROFILE_VERSION {
        return Err(Error::Format(format!("unsupported profile version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: ProfileMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format(format!("profile metadata: {e}")))?;
    let safe_len = r.u64()? as usize;
    let safe = decode_model(r.take(safe_len)?)?;
    let unsafe_len = r.u64()? as usize;
    let unsafe_ = decode_model(r.take(unsafe_len)?)?;
    let mut p = DetectorProfile::new(safe, unsafe_, meta.tag)?;
    p.tau = meta.tau;
    p.theta_s = meta.theta_s.unwrap_or(f64::NEG_INFINITY);
    p.theta_u = meta.theta_u.unwrap_or(f64::NEG_INFINITY);
    p.provenance = meta.provenance;
    Ok(p)
}

pub fn save_profile(path: &Path, p: &DetectorProfile) -> Result<()> {
    std::fs::write(path, encode_profile(p)).map_err(|e| Error::io(path, e))
}

pub fn load_profile(path: &Path) -> Result<DetectorProfile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_profile(&bytes)
}
