//! Kept-population evaluation over test pairings, stratified rates, and the
//! estimator × safe-data ablation grid.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{fit_density, rows_to_matrix, DensityModel, EstimatorConfig, EstimatorKind, PcaTransform};
use crate::detector::{
    calibrate_abstain, CalibrationProvenance, ConfigTag, Decision, DetectorProfile, Outcome, SafeVariant,
};
use crate::embedding::EmbeddingCache;
use crate::error::{Error, Result};
use crate::metrics::{auroc, fpr_at_tpr, rate_above};
use crate::record::Record;

/// Strata smaller than this are reported as counts only.
pub const MIN_STRATUM_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingName {
    WithinDistribution,
    CrossGenerator,
    BorderlineStress,
}

impl PairingName {
    pub const ALL: [PairingName; 3] = [
        PairingName::WithinDistribution,
        PairingName::CrossGenerator,
        PairingName::BorderlineStress,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairingName::WithinDistribution => "within_distribution",
            PairingName::CrossGenerator => "cross_generator",
            PairingName::BorderlineStress => "borderline_stress",
        }
    }
}

impl std::str::FromStr for PairingName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PairingName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown pairing {s:?}")))
    }
}

/// Unsafe positives against safe negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPairing {
    pub name: PairingName,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl TestPairing {
    pub fn new(name: PairingName, positive: Vec<String>, negative: Vec<String>) -> Result<Self> {
        let pos: HashSet<&str> = positive.iter().map(String::as_str).collect();
        if let Some(shared) = negative.iter().find(|id| pos.contains(id.as_str())) {
            return Err(Error::validation(
                "pairing",
                format!("{}: record {shared} is both positive and negative", name.as_str()),
            ));
        }
        Ok(TestPairing {
            name,
            positive,
            negative,
        })
    }
}

/// Source of embedding vectors by record id.
pub trait VectorLookup: Sync {
    fn vector(&self, id: &str) -> Option<Vec<f64>>;
}

impl VectorLookup for EmbeddingCache {
    fn vector(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id).map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }
}

impl VectorLookup for HashMap<String, Vec<f64>> {
    fn vector(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub id: String,
    pub positive: bool,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub n: usize,
    pub n_kept: usize,
    pub n_flagged: usize,
    /// Full-population flag rate; absent below the display minimum.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub key: String,
    pub rows: BTreeMap<String, StratumRow>,
    /// Kept-only rate over the same side of the pairing.
    pub global_kept_rate: f64,
    pub omitted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_tag: String,
    pub pairing: PairingName,
    pub n_kept_pos: usize,
    pub n_kept_neg: usize,
    pub n_abstain_pos: usize,
    pub n_abstain_neg: usize,
    pub abstain_rate_pos: f64,
    pub abstain_rate_neg: f64,
    pub auroc: f64,
    pub fpr95: f64,
    pub fpr90: f64,
    pub tpr_at_tau0: f64,
    pub fpr_at_tau0: f64,
    pub tau: f64,
    pub tpr_at_tau: f64,
    pub fpr_at_tau: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<Strata>,
}

/// Decisions for every record of a pairing. Missing embeddings are an error.
pub fn score_pairing(
    profile: &DetectorProfile,
    pairing: &TestPairing,
    lookup: &dyn VectorLookup,
) -> Result<Vec<ScoredItem>> {
    let ids: Vec<(&String, bool)> = pairing
        .positive
        .iter()
        .map(|id| (id, true))
        .chain(pairing.negative.iter().map(|id| (id, false)))
        .collect();
    ids.par_iter()
        .map(|&(id, positive)| {
            let x = lookup
                .vector(id)
                .ok_or_else(|| Error::Cache(format!("no embedding for record {id}")))?;
            Ok(ScoredItem {
                id: id.clone(),
                positive,
                decision: profile.decide(&x)?,
            })
        })
        .collect()
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary metrics over the kept population; abstentions are counted per class.
pub fn report_from_scored(
    config_tag: &str,
    pairing: PairingName,
    items: &[ScoredItem],
    tau: f64,
) -> Result<EvaluationReport> {
    let kept = |positive: bool| -> Vec<f64> {
        items
            .iter()
            .filter(|i| i.positive == positive && i.decision.outcome != Outcome::Abstain)
            .map(|i| i.decision.delta)
            .collect()
    };
    let (pos, neg) = (kept(true), kept(false));
    let n_pos = items.iter().filter(|i| i.positive).count();
    let n_neg = items.len() - n_pos;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Numeric(format!(
            "insufficient kept records for {} ({} positive, {} negative kept)",
            pairing.as_str(),
            pos.len(),
            neg.len()
        )));
    }
    Ok(EvaluationReport {
        config_tag: config_tag.to_string(),
        pairing,
        n_kept_pos: pos.len(),
        n_kept_neg: neg.len(),
        n_abstain_pos: n_pos - pos.len(),
        n_abstain_neg: n_neg - neg.len(),
        abstain_rate_pos: rate(n_pos - pos.len(), n_pos),
        abstain_rate_neg: rate(n_neg - neg.len(), n_neg),
        auroc: auroc(&pos, &neg)?,
        fpr95: fpr_at_tpr(&pos, &neg, 0.95)?,
        fpr90: fpr_at_tpr(&pos, &neg, 0.90)?,
        tpr_at_tau0: rate_above(&pos, 0.0),
        fpr_at_tau0: rate_above(&neg, 0.0),
        tau,
        tpr_at_tau: rate_above(&pos, tau),
        fpr_at_tau: rate_above(&neg, tau),
        strata: Vec::new(),
    })
}

/// Scores and reports one pairing with the profile's calibrated τ and gate.
pub fn evaluate(
    profile: &DetectorProfile,
    pairing: &TestPairing,
    lookup: &dyn VectorLookup,
) -> Result<EvaluationReport> {
    let items = score_pairing(profile, pairing, lookup)?;
    report_from_scored(&profile.tag.to_string(), pairing.name, &items, profile.tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumKey {
    /// Negatives by borderline subtype (FPR).
    BorderlineSubtype,
    /// Positives by generating model (TPR).
    Generator,
}

impl StratumKey {
    pub fn as_str(self) -> &'static str {
        match self {
            StratumKey::BorderlineSubtype => "borderline_subtype",
            StratumKey::Generator => "generator",
        }
    }

    fn side(self) -> bool {
        matches!(self, StratumKey::Generator)
    }
}

/// Per-stratum flag rates at `tau`. Stratum rows are full-population (an
/// abstained record counts as not flagged); the global row is kept-only.
/// Rates of strata smaller than `min_n` (usually [`MIN_STRATUM_N`]) are left out.
pub fn stratify(
    items: &[ScoredItem],
    records: &HashMap<String, Record>,
    key: StratumKey,
    tau: f64,
    min_n: usize,
) -> Result<Strata> {
    let side = key.side();
    let mut rows: BTreeMap<String, StratumRow> = BTreeMap::new();
    let (mut kept, mut kept_flagged) = (0usize, 0usize);
    for item in items.iter().filter(|i| i.positive == side) {
        let rec = records
            .get(&item.id)
            .ok_or_else(|| Error::validation("stratify", format!("record {} not found", item.id)))?;
        let label = match key {
            StratumKey::BorderlineSubtype => rec.subtype.map(|s| s.as_str().to_string()),
            StratumKey::Generator => rec.generator.clone(),
        }
        .ok_or_else(|| Error::validation(key.as_str(), format!("record {} has no {}", item.id, key.as_str())))?;
        let flagged = item.decision.outcome != Outcome::Abstain && item.decision.delta > tau;
        let is_kept = item.decision.outcome != Outcome::Abstain;
        let row = rows.entry(label).or_insert(StratumRow {
            n: 0,
            n_kept: 0,
            n_flagged: 0,
            rate: None,
        });
        row.n += 1;
        row.n_kept += usize::from(is_kept);
        row.n_flagged += usize::from(flagged);
        kept += usize::from(is_kept);
        kept_flagged += usize::from(flagged);
    }
    for row in rows.values_mut() {
        if row.n >= min_n {
            row.rate = Some(row.n_flagged as f64 / row.n as f64);
        }
    }
    let omitted = match key {
        StratumKey::BorderlineSubtype => crate::record::BorderlineSubtype::ALL
            .iter()
            .map(|s| s.as_str().to_string())
            .filter(|s| !rows.contains_key(s))
            .collect(),
        StratumKey::Generator => Vec::new(),
    };
    for name in &omitted {
        log::info!("stratum {name} has no records; omitted");
    }
    Ok(Strata {
        key: key.as_str().to_string(),
        rows,
        global_kept_rate: rate(kept_flagged, kept),
        omitted,
    })
}

/// Training and test material for the 2 × 2 grid.
pub struct AblationInputs<'a> {
    pub safe_train: &'a [Vec<f64>],
    pub borderline_aug: &'a [Vec<f64>],
    pub unsafe_train: &'a [Vec<f64>],
    /// Ids used to set the abstain thresholds.
    pub safe_holdout: &'a [String],
    pub unsafe_holdout: &'a [String],
    pub pairings: &'a [TestPairing],
    pub lookup: &'a dyn VectorLookup,
    pub config: EstimatorConfig,
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub tag: String,
    pub reports: Vec<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn get(&self, tag: &str, pairing: PairingName) -> Option<&EvaluationReport> {
        self.cells
            .iter()
            .find(|c| c.tag == tag)?
            .reports
            .iter()
            .find(|r| r.pairing == pairing)
    }
}

pub const GRID_TAGS: [ConfigTag; 4] = [
    ConfigTag {
        estimator: EstimatorKind::Gmm,
        variant: SafeVariant::V3,
    },
    ConfigTag {
        estimator: EstimatorKind::Gmm,
        variant: SafeVariant::V4,
    },
    ConfigTag {
        estimator: EstimatorKind::Ocsvm,
        variant: SafeVariant::V3,
    },
    ConfigTag {
        estimator: EstimatorKind::Ocsvm,
        variant: SafeVariant::V4,
    },
];

/// One PCA over all training rows, shared by every model in the grid.
pub fn shared_pca(inputs: &AblationInputs<'_>) -> Result<PcaTransform> {
    let pooled: Vec<&[f64]> = inputs
        .safe_train
        .iter()
        .chain(inputs.borderline_aug)
        .chain(inputs.unsafe_train)
        .map(Vec::as_slice)
        .collect();
    let m = rows_to_matrix(&pooled)?;
    let out = inputs.config.pca_dim.min(m.nrows().min(m.ncols()));
    crate::density::fit_pca(&m, out)
}

/// Trains all four cells (one unsafe model per estimator, shared by v3 and
/// v4) and evaluates each pairing at τ = 0.
pub fn ablation_grid(inputs: &AblationInputs<'_>) -> Result<GridReport> {
    let pca = shared_pca(inputs)?;
    let unsafe_rows = rows_to_matrix(inputs.unsafe_train)?;
    let v3_rows = rows_to_matrix(inputs.safe_train)?;
    let v4_rows = {
        let mut all: Vec<&[f64]> = inputs.safe_train.iter().map(Vec::as_slice).collect();
        all.extend(inputs.borderline_aug.iter().map(Vec::as_slice));
        rows_to_matrix(&all)?
    };
    let cfg_for = |estimator| EstimatorConfig {
        estimator,
        ..inputs.config.clone()
    };

    let unsafe_models: Vec<DensityModel> = [EstimatorKind::Gmm, EstimatorKind::Ocsvm]
        .par_iter()
        .map(|&e| fit_density(&unsafe_rows, &pca, &cfg_for(e)))
        .collect::<Result<_>>()?;

    let cells: Vec<GridCell> = GRID_TAGS
        .par_iter()
        .map(|tag| {
            let safe_rows = match tag.variant {
                SafeVariant::V3 => &v3_rows,
                SafeVariant::V4 => &v4_rows,
            };
            let safe = fit_density(safe_rows, &pca, &cfg_for(tag.estimator))?;
            let unsafe_model = match tag.estimator {
                EstimatorKind::Gmm => unsafe_models[0].clone(),
                EstimatorKind::Ocsvm => unsafe_models[1].clone(),
            };
            let mut profile = DetectorProfile::new(safe, unsafe_model, *tag)?;
            calibrate_profile(
                &mut profile,
                inputs.safe_holdout,
                inputs.unsafe_holdout,
                inputs.lookup,
                inputs.percentile,
            )?;
            let reports = inputs
                .pairings
                .iter()
                .map(|p| evaluate(&profile, p, inputs.lookup))
                .collect::<Result<Vec<_>>>()?;
            Ok(GridCell {
                tag: tag.to_string(),
                reports,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GridReport { cells })
}

/// Sets θ_s, θ_u from holdout scores; τ is left unchanged.
pub fn calibrate_profile(
    profile: &mut DetectorProfile,
    safe_holdout: &[String],
    unsafe_holdout: &[String],
    lookup: &dyn VectorLookup,
    percentile: f64,
) -> Result<()> {
    let scores = |ids: &[String], pick_unsafe: bool| -> Result<Vec<f64>> {
        ids.iter()
            .map(|id| {
                let x = lookup
                    .vector(id)
                    .ok_or_else(|| Error::Cache(format!("no embedding for record {id}")))?;
                let (s, u) = profile.scores(&x)?;
                Ok(if pick_unsafe { u } else { s })
            })
            .collect()
    };
    let (theta_s, theta_u) = calibrate_abstain(
        &scores(safe_holdout, false)?,
        &scores(unsafe_holdout, true)?,
        percentile,
    )?;
    profile.set_abstain(
        theta_s,
        theta_u,
        CalibrationProvenance {
            safe_holdout: safe_holdout.to_vec(),
            unsafe_holdout: unsafe_holdout.to_vec(),
            percentile,
        },
    );
    Ok(())
}

/// Fixed-width text table, one line per (cell, pairing).
pub fn render_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<20} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8}",
        "config", "pairing", "auroc", "fpr95", "fpr90", "tpr@0", "fpr@0", "abst+", "abst-"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<10} {:<20} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.2}% {:>7.2}%",
            r.config_tag,
            r.pairing.as_str(),
            r.auroc,
            r.fpr95,
            r.fpr90,
            r.tpr_at_tau0,
            r.fpr_at_tau0,
            100.0 * r.abstain_rate_pos,
            100.0 * r.abstain_rate_neg
        );
    }
    out
}

pub fn render_grid(grid: &GridReport) -> String {
    let all: Vec<EvaluationReport> = grid.cells.iter().flat_map(|c| c.reports.iter().cloned()).collect();
    render_table(&all)
}
