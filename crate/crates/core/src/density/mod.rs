//! One-class density estimators over fused embeddings.
//!
//! Both estimators expose a scalar score where larger means "more typical
//! of the training data": a log-likelihood for the Gaussian mixture, a
//! signed distance for the one-class SVM. All arithmetic is `f64`.

pub mod bandwidth;
pub mod gmm;
pub mod nu_sweep;
pub mod ocsvm;
pub mod pca;
pub mod persist;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bandwidth::median_heuristic_gamma;
pub use gmm::{fit_gmm, GmmFit, GmmModel, GmmParams};
pub use nu_sweep::{sweep_nu, NuCandidate, NuSweep, DEFAULT_FOLDS, DEFAULT_NU_CANDIDATES};
pub use ocsvm::{fit_ocsvm, OcsvmFit, OcsvmModel, OcsvmParams};
pub use pca::{fit_pca, PcaTransform};

use crate::error::{Error, Result};

/// ν used for the law domain in the reference deployment.
pub const LAW_DOMAIN_NU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    GmmLoglik,
    OcsvmSignedDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreScalar {
    pub value: f64,
    pub kind: ScoreKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Gmm,
    Ocsvm,
}

impl EstimatorKind {
    pub fn score_kind(self) -> ScoreKind {
        match self {
            EstimatorKind::Gmm => ScoreKind::GmmLoglik,
            EstimatorKind::Ocsvm => ScoreKind::OcsvmSignedDistance,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Gmm => "gmm",
            EstimatorKind::Ocsvm => "ocsvm",
        }
    }
}

/// A fitted one-class scorer with its preprocessing baked in.
#[derive(Debug, Clone)]
pub enum DensityModel {
    Gmm(GmmModel),
    Ocsvm(OcsvmModel),
}

impl DensityModel {
    pub fn estimator(&self) -> EstimatorKind {
        match self {
            DensityModel::Gmm(_) => EstimatorKind::Gmm,
            DensityModel::Ocsvm(_) => EstimatorKind::Ocsvm,
        }
    }

    pub fn kind(&self) -> ScoreKind {
        self.estimator().score_kind()
    }

    pub fn preprocessing(&self) -> &PcaTransform {
        match self {
            DensityModel::Gmm(m) => m.preprocessing(),
            DensityModel::Ocsvm(m) => m.preprocessing(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.preprocessing().input_dim()
    }

    pub fn score(&self, x: &[f64]) -> Result<ScoreScalar> {
        match self {
            DensityModel::Gmm(m) => m.score(x),
            DensityModel::Ocsvm(m) => m.score(x),
        }
    }

    /// Scores a point the caller has already passed through
    /// [`DensityModel::preprocessing`].
    pub fn score_reduced(&self, z: &DVector<f64>) -> Result<ScoreScalar> {
        match self {
            DensityModel::Gmm(m) => m.score_reduced(z),
            DensityModel::Ocsvm(m) => m.score_reduced(z),
        }
    }
}

/// Estimator hyperparameters shared by the training entry points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub estimator: EstimatorKind,
    pub pca_dim: usize,
    pub gmm_components: usize,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
    /// Fixed ν; when absent it is chosen by [`sweep_nu`].
    pub nu: Option<f64>,
    pub nu_candidates: Vec<f64>,
    pub nu_folds: usize,
    pub gamma_subsample: usize,
    pub ocsvm_tol: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            estimator: EstimatorKind::Ocsvm,
            pca_dim: 512,
            gmm_components: 8,
            gmm_tol: 1e-6,
            gmm_max_iter: 500,
            nu: None,
            nu_candidates: DEFAULT_NU_CANDIDATES.to_vec(),
            nu_folds: DEFAULT_FOLDS,
            gamma_subsample: bandwidth::DEFAULT_SUBSAMPLE,
            ocsvm_tol: 1e-4,
            seed: 0,
        }
    }
}

/// Fits the configured estimator on raw rows with a given (shared) PCA.
pub fn fit_density(data: &DMatrix<f64>, pca: &PcaTransform, config: &EstimatorConfig) -> Result<DensityModel> {
    match config.estimator {
        EstimatorKind::Gmm => {
            let params = GmmParams {
                k: config.gmm_components,
                seed: config.seed,
                tol: config.gmm_tol,
                max_iter: config.gmm_max_iter,
                ..GmmParams::default()
            };
            Ok(DensityModel::Gmm(fit_gmm(data, pca.clone(), &params)?.model))
        }
        EstimatorKind::Ocsvm => {
            let reduced = pca.transform_rows(data)?;
            let gamma = median_heuristic_gamma(&reduced, config.gamma_subsample, config.seed)?;
            let nu = match config.nu {
                Some(nu) => nu,
                None => {
                    let sweep = sweep_nu(&reduced, &config.nu_candidates, config.nu_folds, config.seed)?;
                    log::info!("nu sweep selected {}", sweep.nu);
                    sweep.nu
                }
            };
            let mut params = OcsvmParams::new(nu, gamma);
            params.tol = config.ocsvm_tol;
            Ok(DensityModel::Ocsvm(fit_ocsvm(data, pca.clone(), &params)?.model))
        }
    }
}

/// Stacks row vectors into an `n × d` matrix.
pub fn rows_to_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<DMatrix<f64>> {
    let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != d) {
        return Err(Error::Dimension {
            expected: d,
            actual: bad.as_ref().len(),
        });
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        d,
        rows.iter().flat_map(|r| r.as_ref().iter().copied()),
    ))
}
