use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a direction counts as zero variance.
const RANK_TOL: f64 = 1e-12;

/// Mean-centering followed by projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    mean: DVector<f64>,
    /// `output_dim × input_dim`, orthonormal rows.
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
    /// Set when some retained direction carries no variance and was filled
    /// in by orthonormal completion.
    degenerate: bool,
}

impl PcaTransform {
    /// Pass-through transform: zero mean, identity components.
    pub fn identity(dim: usize) -> Self {
        PcaTransform {
            mean: DVector::zeros(dim),
            components: DMatrix::identity(dim, dim),
            explained_variance: vec![0.0; dim],
            degenerate: false,
        }
    }

    pub fn from_parts(
        mean: DVector<f64>,
        components: DMatrix<f64>,
        explained_variance: Vec<f64>,
        degenerate: bool,
    ) -> Result<Self> {
        if components.ncols() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                actual: components.ncols(),
            });
        }
        if explained_variance.len() != components.nrows() {
            return Err(Error::Format(
                "explained variance length differs from component count".into(),
            ));
        }
        let pca = PcaTransform {
            mean,
            components,
            explained_variance,
            degenerate,
        };
        let dev = pca.orthonormality_error();
        if !(dev < 1e-6) {
            return Err(Error::Format(format!(
                "PCA components not orthonormal (deviation {dev:e})"
            )));
        }
        Ok(pca)
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// max |P Pᵀ − I|.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = &self.components * self.components.transpose();
        let eye = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
        (gram - eye).amax()
    }

    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let centered = DVector::from_column_slice(x) - &self.mean;
        Ok(&self.components * centered)
    }

    /// Row-wise transform of an `n × input_dim` matrix.
    pub fn transform_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: data.ncols(),
            });
        }
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    /// Maps reduced coordinates back to input space.
    pub fn inverse_transform(&self, z: &DVector<f64>) -> DVector<f64> {
        self.components.transpose() * z + &self.mean
    }
}

/// Fits a PCA on the rows of `data` (`n × d`).
///
/// Components come out ordered by decreasing explained variance, with the
/// first non-negligible coordinate of each made positive. When `n < d` the
/// decomposition goes through the `n × n` Gram matrix instead of the
/// `d × d` covariance.
pub fn fit_pca(data: &DMatrix<f64>, output_dim: usize) -> Result<PcaTransform> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::Numeric(format!("PCA needs at least 2 rows, got {n}")));
    }
    if output_dim == 0 || output_dim > n.min(d) {
        return Err(Error::Numeric(format!(
            "output_dim {output_dim} exceeds rank bound min(n={n}, d={d})"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in PCA input".into()));
    }

    let mean = data.row_mean().transpose();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;

    let (mut dirs, mut variances) = if d <= n {
        let cov = centered.transpose() * &centered / denom;
        let (vals, vecs) = sorted_eigen(cov);
        let dirs: Vec<DVector<f64>> = (0..output_dim).map(|i| vecs.column(i).into_owned()).collect();
        (dirs, vals[..output_dim].to_vec())
    } else {
        let gram = &centered * centered.transpose();
        let (vals, vecs) = sorted_eigen(gram);
        let top = vals.first().copied().unwrap_or(0.0).max(0.0);
        let mut dirs = Vec::with_capacity(output_dim);
        let mut variances = Vec::with_capacity(output_dim);
        for i in 0..output_dim {
            if vals[i] > RANK_TOL * top && top > 0.0 {
                let v = centered.transpose() * vecs.column(i);
                let norm = v.norm();
                dirs.push(v / norm);
                variances.push(vals[i] / denom);
            } else {
                break;
            }
        }
        (dirs, variances)
    };

    let top = variances.first().copied().unwrap_or(0.0).max(0.0);
    for v in variances.iter_mut() {
        if *v <= RANK_TOL * top || top == 0.0 {
            *v = 0.0;
        }
    }
    let degenerate = dirs.len() < output_dim || variances.iter().any(|&v| v == 0.0);
    if degenerate {
        if top == 0.0 {
            log::warn!("PCA input has zero variance; using identity completion");
            dirs.clear();
            variances.clear();
        } else {
            log::warn!("PCA retained directions with zero variance; completing basis");
            // Keep only the directions that carry variance, then complete.
            let keep = variances.iter().take_while(|&&v| v > 0.0).count();
            dirs.truncate(keep);
            variances.truncate(keep);
        }
        complete_basis(&mut dirs, d, output_dim);
        variances.resize(output_dim, 0.0);
    }

    let mut components = DMatrix::zeros(output_dim, d);
    for (i, dir) in dirs.iter().enumerate() {
        let mut dir = dir.clone();
        let scale = dir.amax();
        if let Some(first) = dir.iter().find(|v| v.abs() > 1e-9 * scale) {
            if *first < 0.0 {
                dir.neg_mut();
            }
        }
        components.set_row(i, &dir.transpose());
    }

    Ok(PcaTransform {
        mean,
        components,
        explained_variance: variances,
        degenerate,
    })
}

/// Eigen-decomposition with eigenvalues sorted in decreasing order.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// Extends `dirs` to `target` orthonormal vectors by Gram–Schmidt over the
/// standard basis.
fn complete_basis(dirs: &mut Vec<DVector<f64>>, dim: usize, target: usize) {
    for axis in 0..dim {
        if dirs.len() >= target {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[axis] = 1.0;
        // Two passes for numerical orthogonality.
        for _ in 0..2 {
            for u in dirs.iter() {
                let proj = u.dot(&v);
                v.axpy(-proj, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            dirs.push(v / norm);
        }
    }
}
