//! ν-parameterized one-class SVM with an RBF kernel, trained by sequential
//! minimal optimization with second-order working-set selection.
//!
//! The dual is solved in its normalized form
//!
//! ```text
//! min ½ αᵀKα   s.t.  0 ≤ α_i ≤ 1/(ν n),  Σ α_i = 1
//! ```
//!
//! so the decision function is `Σ α_i k(x_i, z) − ρ`.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::pca::PcaTransform;
use super::{ScoreKind, ScoreScalar};
use crate::error::{Error, Result};

/// Coefficients at or below this are dropped from the stored model.
const SUPPORT_EPS: f64 = 1e-8;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OcsvmParams {
    pub nu: f64,
    pub gamma: f64,
    /// Maximal violating-pair gap at which the solver stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Budget for cached kernel rows.
    pub cache_bytes: usize,
}

impl OcsvmParams {
    pub fn new(nu: f64, gamma: f64) -> Self {
        OcsvmParams {
            nu,
            gamma,
            tol: 1e-4,
            max_iter: 1_000_000,
            cache_bytes: 256 << 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcsvmModel {
    /// One support vector per row, in reduced coordinates.
    support_vectors: DMatrix<f64>,
    alphas: Vec<f64>,
    rho: f64,
    gamma: f64,
    nu: f64,
    n_train: usize,
    preprocessing: PcaTransform,
    // Row-major copy of the support vectors for the scoring loop.
    sv_rows: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OcsvmFit {
    pub model: OcsvmModel,
    pub iterations: usize,
    /// Final maximal violating-pair gap.
    pub gap: f64,
    /// Full coefficient vector over the training rows.
    pub alphas: Vec<f64>,
    /// Decision value of every training row.
    pub training_decisions: Vec<f64>,
}

impl OcsvmModel {
    pub fn from_parts(
        support_vectors: DMatrix<f64>,
        alphas: Vec<f64>,
        rho: f64,
        gamma: f64,
        nu: f64,
        n_train: usize,
        preprocessing: PcaTransform,
    ) -> Result<Self> {
        if support_vectors.nrows() != alphas.len() {
            return Err(Error::Format("support vector / alpha count mismatch".into()));
        }
        if support_vectors.ncols() != preprocessing.output_dim() {
            return Err(Error::Dimension {
                expected: preprocessing.output_dim(),
                actual: support_vectors.ncols(),
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Format(format!("gamma must be positive, got {gamma}")));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::Format(format!("nu must lie in (0, 1], got {nu}")));
        }
        if !rho.is_finite() || n_train == 0 {
            return Err(Error::Format("invalid rho or training size".into()));
        }
        let upper = 1.0 / (nu * n_train as f64);
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Format(format!("alphas sum to {sum}, expected 1")));
        }
        if alphas.iter().any(|&a| !(a >= 0.0 && a <= upper + 1e-8)) {
            return Err(Error::Format("alpha outside [0, 1/(nu n)]".into()));
        }
        let sv_rows = support_vectors.transpose().as_slice().to_vec();
        Ok(OcsvmModel {
            support_vectors,
            alphas,
            rho,
            gamma,
            nu,
            n_train,
            preprocessing,
            sv_rows,
        })
    }

    pub fn support_vectors(&self) -> &DMatrix<f64> {
        &self.support_vectors
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn preprocessing(&self) -> &PcaTransform {
        &self.preprocessing
    }

    pub fn score_reduced(&self, z: &DVector<f64>) -> Result<ScoreScalar> {
        let dim = self.preprocessing.output_dim();
        if z.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: z.len(),
            });
        }
        let z = z.as_slice();
        let mut total = 0.0;
        for (alpha, sv) in self.alphas.iter().zip(self.sv_rows.chunks_exact(dim)) {
            total += alpha * (-self.gamma * sq_dist(sv, z)).exp();
        }
        Ok(ScoreScalar {
            value: total - self.rho,
            kind: ScoreKind::OcsvmSignedDistance,
        })
    }

    /// Signed distance Σ α_i exp(−γ‖x_i − PCA(x)‖²) − ρ.
    pub fn score(&self, x: &[f64]) -> Result<ScoreScalar> {
        let z = self.preprocessing.transform(x)?;
        self.score_reduced(&z)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel rows computed on demand and kept under a byte budget (FIFO eviction).
struct KernelRows<'a> {
    points: &'a [f64],
    dim: usize,
    gamma: f64,
    rows: Vec<Option<Arc<[f64]>>>,
    order: VecDeque<usize>,
    max_rows: usize,
}

impl<'a> KernelRows<'a> {
    fn new(points: &'a [f64], dim: usize, gamma: f64, cache_bytes: usize) -> Self {
        let n = points.len() / dim;
        let max_rows = (cache_bytes / (n.max(1) * std::mem::size_of::<f64>())).max(2);
        KernelRows {
            points,
            dim,
            gamma,
            rows: vec![None; n],
            order: VecDeque::new(),
            max_rows,
        }
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        if let Some(r) = &self.rows[i] {
            return Arc::clone(r);
        }
        let xi = self.point(i);
        let row: Arc<[f64]> = self
            .points
            .chunks_exact(self.dim)
            .map(|xj| (-self.gamma * sq_dist(xi, xj)).exp())
            .collect();
        if self.order.len() >= self.max_rows {
            if let Some(old) = self.order.pop_front() {
                self.rows[old] = None;
            }
        }
        self.order.push_back(i);
        self.rows[i] = Some(Arc::clone(&row));
        row
    }
}

/// Fits a one-class SVM to the rows of `data` after `preprocessing`.
pub fn fit_ocsvm(data: &DMatrix<f64>, preprocessing: PcaTransform, params: &OcsvmParams) -> Result<OcsvmFit> {
    let nu = params.nu;
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Config(format!("nu must lie in (0, 1], got {nu}")));
    }
    if !(params.gamma > 0.0 && params.gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {}", params.gamma)));
    }
    let z = preprocessing.transform_rows(data)?;
    let (n, dim) = z.shape();
    if n < 2 {
        return Err(Error::Numeric(format!("one-class SVM needs at least 2 rows, got {n}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in OCSVM input".into()));
    }
    let points: Vec<f64> = z.transpose().as_slice().to_vec();
    let upper = 1.0 / (nu * n as f64);

    // Feasible start: fill the first ⌊νn⌋ coefficients to the bound.
    let mut alpha = vec![0.0; n];
    let full = ((nu * n as f64).floor() as usize).min(n);
    for a in alpha.iter_mut().take(full) {
        *a = upper;
    }
    if full < n {
        alpha[full] = (1.0 - full as f64 * upper).max(0.0);
    }

    let mut kernel = KernelRows::new(&points, dim, params.gamma, params.cache_bytes);
    let mut grad = vec![0.0; n];
    for i in 0..n {
        if alpha[i] > 0.0 {
            let row = kernel.row(i);
            for j in 0..n {
                grad[j] += alpha[i] * row[j];
            }
        }
    }

    let mut iterations = 0;
    let gap = loop {
        // i: smallest gradient among coefficients that can grow.
        let mut i = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            if alpha[t] < upper && grad[t] < g_min {
                g_min = grad[t];
                i = t;
            }
        }
        // Largest gradient among coefficients that can shrink.
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
            }
        }
        let gap = g_max - g_min;
        if i == usize::MAX || gap < params.tol {
            break gap.max(0.0);
        }
        if iterations >= params.max_iter {
            return Err(Error::Numeric(format!(
                "SMO did not converge after {iterations} iterations (gap {gap:e})"
            )));
        }
        iterations += 1;

        let row_i = kernel.row(i);
        // j: second-order choice maximizing the guaranteed objective decrease.
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 {
                let b = grad[t] - g_min;
                if b > 0.0 {
                    let mut a = 2.0 - 2.0 * row_i[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if j == usize::MAX {
            break gap;
        }
        let row_j = kernel.row(j);

        let mut quad = 2.0 - 2.0 * row_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let delta = (grad[i] - grad[j]) / quad;
        let sum = old_i + old_j;
        let mut ai = old_i - delta;
        let mut aj = old_j + delta;
        if sum > upper {
            if ai > upper {
                ai = upper;
                aj = sum - upper;
            }
        } else if aj < 0.0 {
            aj = 0.0;
            ai = sum;
        }
        if sum > upper {
            if aj > upper {
                aj = upper;
                ai = sum - upper;
            }
        } else if ai < 0.0 {
            ai = 0.0;
            aj = sum;
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..n {
            grad[t] += di * row_i[t] + dj * row_j[t];
        }
    };

    let rho = compute_rho(&alpha, &grad, upper);
    let training_decisions: Vec<f64> = grad.iter().map(|g| g - rho).collect();

    let keep: Vec<usize> = (0..n).filter(|&i| alpha[i] > SUPPORT_EPS).collect();
    let mut svs = DMatrix::zeros(keep.len(), dim);
    for (r, &i) in keep.iter().enumerate() {
        svs.set_row(r, &z.row(i));
    }
    let sv_alphas: Vec<f64> = keep.iter().map(|&i| alpha[i]).collect();
    let model = OcsvmModel::from_parts(svs, sv_alphas, rho, params.gamma, nu, n, preprocessing)?;
    Ok(OcsvmFit {
        model,
        iterations,
        gap,
        alphas: alpha,
        training_decisions,
    })
}

/// ρ is the median gradient over margin vectors (0 < α < C). Without any,
/// it is the midpoint of the interval the KKT conditions allow.
pub(crate) fn compute_rho(alpha: &[f64], grad: &[f64], upper: f64) -> f64 {
    let mut free: Vec<f64> = alpha
        .iter()
        .zip(grad)
        .filter(|(&a, _)| a > 0.0 && a < upper)
        .map(|(_, &g)| g)
        .collect();
    if !free.is_empty() {
        return median(&mut free);
    }
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    for (&a, &g) in alpha.iter().zip(grad) {
        if a >= upper {
            lb = lb.max(g);
        } else {
            ub = ub.min(g);
        }
    }
    match (lb.is_finite(), ub.is_finite()) {
        (true, true) => 0.5 * (lb + ub),
        (true, false) => lb,
        (false, true) => ub,
        (false, false) => 0.0,
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
