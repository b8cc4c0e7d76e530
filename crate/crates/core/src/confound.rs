//! Synthetic style/content geometry for reproducing the case-style confound.
//!
//! Safe points sit at the origin, unsafe points at `style·e0 + content·c`,
//! borderline points at `style·e0` only, all with unit covariance. `c` is
//! `e1` unless `rotation` tilts it toward the style axis.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::EstimatorConfig;
use crate::detector::DEFAULT_ABSTAIN_PERCENTILE;
use crate::error::{Error, Result};
use crate::eval::{ablation_grid, AblationInputs, GridReport, PairingName, TestPairing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfoundFixture {
    pub style_shift: f64,
    pub content_shift: f64,
    pub dim: usize,
    pub n_safe: usize,
    pub n_unsafe: usize,
    pub n_borderline_train: usize,
    pub n_borderline_eval: usize,
    pub seed: u64,
    /// Angle in radians tilting the content direction toward the style axis.
    pub rotation: Option<f64>,
    pub pca_dim: usize,
}

impl Default for ConfoundFixture {
    fn default() -> Self {
        ConfoundFixture {
            style_shift: 3.0,
            content_shift: 3.0,
            dim: 16,
            n_safe: 2000,
            n_unsafe: 2000,
            n_borderline_train: 400,
            n_borderline_eval: 400,
            seed: 0,
            rotation: None,
            pca_dim: 8,
        }
    }
}

impl ConfoundFixture {
    pub fn validate(&self) -> Result<()> {
        if !(self.style_shift >= 0.0 && self.content_shift >= 0.0) {
            return Err(Error::validation("fixture", "shifts must be non-negative"));
        }
        if self.dim < 2 {
            return Err(Error::validation(
                "fixture.dim",
                "need at least the style and content axes",
            ));
        }
        if self.pca_dim == 0 || self.pca_dim > self.dim {
            return Err(Error::validation(
                "fixture.pca_dim",
                format!("must lie in 1..={}", self.dim),
            ));
        }
        for (name, n) in [
            ("n_safe", self.n_safe),
            ("n_unsafe", self.n_unsafe),
            ("n_borderline_train", self.n_borderline_train),
            ("n_borderline_eval", self.n_borderline_eval),
        ] {
            if n < 50 {
                return Err(Error::validation(name, "counts must be at least 50"));
            }
        }
        Ok(())
    }

    fn content_direction(&self) -> (f64, f64) {
        let a = self.rotation.unwrap_or(0.0);
        (a.sin(), a.cos())
    }

    pub fn safe_mean(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    pub fn unsafe_mean(&self) -> Vec<f64> {
        let (c0, c1) = self.content_direction();
        let mut m = vec![0.0; self.dim];
        m[0] = self.style_shift + self.content_shift * c0;
        m[1] = self.content_shift * c1;
        m
    }

    pub fn borderline_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[0] = self.style_shift;
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSets {
    pub safe: Vec<Vec<f64>>,
    pub unsafe_: Vec<Vec<f64>>,
    pub borderline_train: Vec<Vec<f64>>,
    pub borderline_eval: Vec<Vec<f64>>,
}

pub fn build_fixture(f: &ConfoundFixture) -> Result<FixtureSets> {
    f.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
    let mut draw = |mean: &[f64], n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                mean.iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + z
                    })
                    .collect()
            })
            .collect()
    };
    let safe = draw(&f.safe_mean(), f.n_safe);
    let unsafe_ = draw(&f.unsafe_mean(), f.n_unsafe);
    let borderline_train = draw(&f.borderline_mean(), f.n_borderline_train);
    let borderline_eval = draw(&f.borderline_mean(), f.n_borderline_eval);
    Ok(FixtureSets {
        safe,
        unsafe_,
        borderline_train,
        borderline_eval,
    })
}

/// Train / calibration holdout / test split sizes for a class of `n` points.
fn split(n: usize) -> (usize, usize, usize) {
    let test = n / 5;
    let holdout = n / 10;
    (n - test - holdout, holdout, test)
}

/// Trains the four grid cells on the fixture and evaluates the
/// within-distribution and borderline pairings.
pub fn run_confound_experiment(f: &ConfoundFixture) -> Result<GridReport> {
    let sets = build_fixture(f)?;
    let mut lookup: HashMap<String, Vec<f64>> = HashMap::new();
    let mut ids = |prefix: &str, rows: &[Vec<f64>]| -> Vec<String> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                let id = format!("{prefix}-{i}");
                lookup.insert(id.clone(), r.clone());
                id
            })
            .collect()
    };
    let (s_train, s_hold, _) = split(f.n_safe);
    let (u_train, u_hold, _) = split(f.n_unsafe);
    let safe_eval_ids = ids("safe", &sets.safe[s_train..]);
    let unsafe_eval_ids = ids("unsafe", &sets.unsafe_[u_train..]);
    let borderline_ids = ids("borderline", &sets.borderline_eval);

    let pairings = [
        TestPairing::new(
            PairingName::WithinDistribution,
            unsafe_eval_ids[u_hold..].to_vec(),
            safe_eval_ids[s_hold..].to_vec(),
        )?,
        TestPairing::new(
            PairingName::BorderlineStress,
            unsafe_eval_ids[u_hold..].to_vec(),
            borderline_ids,
        )?,
    ];
    let config = EstimatorConfig {
        pca_dim: f.pca_dim,
        seed: f.seed,
        ..EstimatorConfig::default()
    };
    ablation_grid(&AblationInputs {
        safe_train: &sets.safe[..s_train],
        borderline_aug: &sets.borderline_train,
        unsafe_train: &sets.unsafe_[..u_train],
        safe_holdout: &safe_eval_ids[..s_hold],
        unsafe_holdout: &unsafe_eval_ids[..u_hold],
        pairings: &pairings,
        lookup: &lookup,
        config,
        percentile: DEFAULT_ABSTAIN_PERCENTILE,
    })
}
