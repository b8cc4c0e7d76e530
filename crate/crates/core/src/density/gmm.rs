//! Full-covariance Gaussian mixture fitted by expectation–maximization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pca::PcaTransform;
use super::{ScoreKind, ScoreScalar};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const MAX_RESEEDS: usize = 10;

#[derive(Debug, Clone)]
pub struct GmmParams {
    pub k: usize,
    pub seed: u64,
    /// Relative improvement in mean log-likelihood below which EM stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to every covariance, as a fraction of trace/d of the
    /// training data covariance.
    pub ridge_scale: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            k: 8,
            seed: 0,
            tol: 1e-6,
            max_iter: 500,
            ridge_scale: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    preprocessing: PcaTransform,
    // Cached per component: lower Cholesky factor and ln w − ½(d ln 2π + ln|Σ|).
    factors: Vec<DMatrix<f64>>,
    log_norms: Vec<f64>,
}

/// Outcome of an EM run.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean training log-likelihood evaluated at the start of each iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
}

impl GmmModel {
    /// Assembles a model from explicit parameters, checking that weights form
    /// a distribution and that every covariance is symmetric positive-definite.
    pub fn from_parts(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        preprocessing: PcaTransform,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::Format("component count mismatch".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!("weights must be a distribution (sum {sum})")));
        }
        let dim = preprocessing.output_dim();
        let mut factors = Vec::with_capacity(k);
        let mut log_norms = Vec::with_capacity(k);
        for (c, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != dim || cov.shape() != (dim, dim) {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: mean.len(),
                });
            }
            let asym = (cov - cov.transpose()).amax();
            if asym > 1e-9 * cov.amax().max(1.0) {
                return Err(Error::Format(format!("covariance {c} not symmetric ({asym:e})")));
            }
            let chol = Cholesky::new(cov.clone())
                .ok_or_else(|| Error::Format(format!("covariance {c} not positive-definite")))?;
            let l = chol.l();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            log_norms.push(weights[c].ln() - 0.5 * (dim as f64 * LN_2PI + log_det));
            factors.push(l);
        }
        Ok(GmmModel {
            weights,
            means,
            covariances,
            preprocessing,
            factors,
            log_norms,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn preprocessing(&self) -> &PcaTransform {
        &self.preprocessing
    }

    /// Log-density of an already-reduced point.
    pub fn score_reduced(&self, z: &DVector<f64>) -> Result<ScoreScalar> {
        if z.len() != self.preprocessing.output_dim() {
            return Err(Error::Dimension {
                expected: self.preprocessing.output_dim(),
                actual: z.len(),
            });
        }
        let terms: Vec<f64> = (0..self.k())
            .map(|c| {
                let diff = z - &self.means[c];
                let y = self.factors[c]
                    .solve_lower_triangular(&diff)
                    .expect("Cholesky factor has a positive diagonal");
                self.log_norms[c] - 0.5 * y.norm_squared()
            })
            .collect();
        Ok(ScoreScalar {
            value: log_sum_exp(&terms),
            kind: ScoreKind::GmmLoglik,
        })
    }

    /// log Σ_k w_k N(PCA(x); μ_k, Σ_k).
    pub fn score(&self, x: &[f64]) -> Result<ScoreScalar> {
        let z = self.preprocessing.transform(x)?;
        self.score_reduced(&z)
    }

    /// Per-row log-densities of reduced data (`n × d`).
    fn component_log_densities(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        component_log_densities(z, &self.means, &self.factors, &self.log_norms)
    }
}

fn component_log_densities(
    z: &DMatrix<f64>,
    means: &[DVector<f64>],
    factors: &[DMatrix<f64>],
    log_norms: &[f64],
) -> DMatrix<f64> {
    let n = z.nrows();
    let mut out = DMatrix::zeros(n, means.len());
    let zt = z.transpose();
    for c in 0..means.len() {
        let mut diff = zt.clone();
        for mut col in diff.column_iter_mut() {
            col -= &means[c];
        }
        let y = factors[c]
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        for i in 0..n {
            out[(i, c)] = log_norms[c] - 0.5 * y.column(i).norm_squared();
        }
    }
    out
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Fits a `k`-component mixture to the rows of `data` after applying
/// `preprocessing`.
///
/// Initialization is k-means++ seeding followed by one hard-assignment
/// M-step. A component whose responsibility mass collapses is re-seeded at
/// the worst-explained training point.
pub fn fit_gmm(data: &DMatrix<f64>, preprocessing: PcaTransform, params: &GmmParams) -> Result<GmmFit> {
    let k = params.k;
    if k < 1 {
        return Err(Error::Config("GMM needs at least one component".into()));
    }
    let z = preprocessing.transform_rows(data)?;
    let (n, d) = z.shape();
    if n < k {
        return Err(Error::Numeric(format!("{n} rows cannot support {k} components")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in GMM input".into()));
    }
    if n < k * (d + 1) {
        log::warn!("GMM: {n} rows for {k} components in {d} dims is below the recommended k(d+1)");
    }

    let global_mean = z.row_mean();
    let mut centered = z.clone();
    for mut row in centered.row_iter_mut() {
        row -= &global_mean;
    }
    let global_trace = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let ridge = (params.ridge_scale * global_trace / d as f64).max(1e-12);
    let global_cov = centered.transpose() * &centered / n as f64 + DMatrix::<f64>::identity(d, d) * ridge;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let centers = kmeans_plus_plus(&z, k, &mut rng);

    // Hard assignment to the nearest center.
    let mut resp = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        let row = z.row(i);
        let best = (0..k)
            .min_by(|&a, &b| {
                let da = (&row - &centers[a]).norm_squared();
                let db = (&row - &centers[b]).norm_squared();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        resp[(i, best)] = 1.0;
    }

    let mut reseeds = 0usize;
    let mut state = m_step(&z, &resp, ridge, &global_cov, None, &mut reseeds)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iter {
        let log_dens = component_log_densities(&z, &state.means, &state.factors, &state.log_norms);
        let mut point_ll = vec![0.0; n];
        for i in 0..n {
            let row: Vec<f64> = log_dens.row(i).iter().copied().collect();
            let lse = log_sum_exp(&row);
            point_ll[i] = lse;
            for c in 0..k {
                resp[(i, c)] = (row[c] - lse).exp();
            }
        }
        let mean_ll = point_ll.iter().sum::<f64>() / n as f64;
        if !mean_ll.is_finite() {
            return Err(Error::Numeric("EM produced a non-finite log-likelihood".into()));
        }
        if let Some(&prev) = trace.last() {
            let improvement = (mean_ll - prev) / f64::abs(prev).max(f64::MIN_POSITIVE);
            if improvement.abs() < params.tol {
                trace.push(mean_ll);
                converged = true;
                break;
            }
        }
        trace.push(mean_ll);
        iterations += 1;
        state = m_step(&z, &resp, ridge, &global_cov, Some(&point_ll), &mut reseeds)?;
    }

    let model = GmmModel::from_parts(state.weights, state.means, state.covariances, preprocessing)?;
    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        iterations,
        converged,
        reseeds,
    })
}

struct EmState {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
    log_norms: Vec<f64>,
}

fn m_step(
    z: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    ridge: f64,
    global_cov: &DMatrix<f64>,
    point_ll: Option<&[f64]>,
    reseeds: &mut usize,
) -> Result<EmState> {
    let (n, d) = z.shape();
    let k = resp.ncols();
    let mass_floor = 1e-10 * n as f64;
    let mut masses: Vec<f64> = (0..k).map(|c| resp.column(c).sum()).collect();
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    let mut used_points = Vec::new();

    for c in 0..k {
        if masses[c] <= mass_floor {
            *reseeds += 1;
            if *reseeds >= MAX_RESEEDS {
                return Err(Error::Numeric(format!("GMM component collapsed {MAX_RESEEDS} times")));
            }
            // Worst-explained point not already used for a re-seed.
            let idx = match point_ll {
                Some(ll) => (0..n)
                    .filter(|i| !used_points.contains(i))
                    .min_by(|&a, &b| ll[a].partial_cmp(&ll[b]).unwrap().then(a.cmp(&b)))
                    .unwrap_or(0),
                None => used_points.len() % n,
            };
            used_points.push(idx);
            log::warn!("GMM: re-seeding empty component {c} at row {idx}");
            means.push(z.row(idx).transpose());
            covariances.push(global_cov.clone());
            masses[c] = 1.0;
            continue;
        }
        let w = resp.column(c);
        let mean = z.transpose() * w / masses[c];
        let mut weighted = z.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row -= mean.transpose();
            row *= w[i].sqrt();
        }
        let mut cov = weighted.transpose() * &weighted / masses[c];
        cov = (&cov + cov.transpose()) * 0.5;
        for j in 0..d {
            cov[(j, j)] += ridge;
        }
        means.push(mean);
        covariances.push(cov);
    }
    let total: f64 = masses.iter().sum();
    let weights: Vec<f64> = masses.iter().map(|m| m / total).collect();

    let mut factors = Vec::with_capacity(k);
    let mut log_norms = Vec::with_capacity(k);
    for c in 0..k {
        let chol = Cholesky::<f64, Dyn>::new(covariances[c].clone())
            .ok_or_else(|| Error::Numeric(format!("covariance {c} lost definiteness")))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        log_norms.push(weights[c].ln() - 0.5 * (d as f64 * LN_2PI + log_det));
        factors.push(l);
    }
    Ok(EmState {
        weights,
        means,
        covariances,
        factors,
        log_norms,
    })
}

fn kmeans_plus_plus(z: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<nalgebra::RowDVector<f64>> {
    let n = z.nrows();
    let mut centers = vec![z.row(rng.random_range(0..n)).into_owned()];
    let mut dist: Vec<f64> = (0..n).map(|i| (z.row(i) - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &dd) in dist.iter().enumerate() {
                if target < dd {
                    chosen = i;
                    break;
                }
                target -= dd;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = z.row(idx).into_owned();
        for (i, dd) in dist.iter_mut().enumerate() {
            *dd = dd.min((z.row(i) - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

impl GmmModel {
    /// Mean log-likelihood over the rows of raw data.
    pub fn mean_log_likelihood(&self, data: &DMatrix<f64>) -> Result<f64> {
        let z = self.preprocessing.transform_rows(data)?;
        let dens = self.component_log_densities(&z);
        let n = z.nrows();
        let total: f64 = (0..n)
            .map(|i| log_sum_exp(&dens.row(i).iter().copied().collect::<Vec<_>>()))
            .sum();
        Ok(total / n as f64)
    }
}
