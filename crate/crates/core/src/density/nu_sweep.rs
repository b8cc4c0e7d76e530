use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bandwidth::{median_heuristic_gamma, DEFAULT_SUBSAMPLE};
use super::ocsvm::{fit_ocsvm, OcsvmParams};
use super::pca::PcaTransform;
use crate::error::{Error, Result};

pub const DEFAULT_NU_CANDIDATES: [f64; 4] = [0.005, 0.01, 0.02, 0.05];
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct NuCandidate {
    pub nu: f64,
    /// Held-out rejection rate per fold.
    pub fold_rejection: Vec<f64>,
    /// Pooled held-out rejection rate.
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuSweep {
    pub nu: f64,
    pub candidates: Vec<NuCandidate>,
}

/// k-fold selection of ν on one-class data: the winner is the candidate whose
/// held-out rejection rate lies closest to ν itself (smaller ν on ties).
///
/// `data` is in the space the model will be trained in; γ is re-derived on
/// each training split by the median heuristic.
pub fn sweep_nu(data: &DMatrix<f64>, candidates: &[f64], folds: usize, seed: u64) -> Result<NuSweep> {
    if candidates.is_empty() {
        return Err(Error::Config("empty nu candidate list".into()));
    }
    let n = data.nrows();
    if folds < 2 || n < folds {
        return Err(Error::Config(format!("cannot split {n} rows into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            f[row] = pos % folds;
        }
        f
    };
    let dim = data.ncols();
    let identity = PcaTransform::identity(dim);

    let mut splits = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let train_m = data.select_rows(&train);
        let gamma = median_heuristic_gamma(&train_m, DEFAULT_SUBSAMPLE, seed)?;
        splits.push((train_m, data.select_rows(&held), gamma));
    }

    let mut results = Vec::with_capacity(candidates.len());
    for &nu in candidates {
        let mut fold_rejection = Vec::with_capacity(folds);
        let (mut rejected, mut total) = (0usize, 0usize);
        for (train, held, gamma) in &splits {
            let fit = fit_ocsvm(train, identity.clone(), &OcsvmParams::new(nu, *gamma))?;
            let mut r = 0;
            for row in held.row_iter() {
                let x: Vec<f64> = row.iter().copied().collect();
                if fit.model.score(&x)?.value < 0.0 {
                    r += 1;
                }
            }
            fold_rejection.push(r as f64 / held.nrows() as f64);
            rejected += r;
            total += held.nrows();
        }
        results.push(NuCandidate {
            nu,
            fold_rejection,
            rejection_rate: rejected as f64 / total as f64,
        });
    }

    let best = results
        .iter()
        .min_by(|a, b| {
            let da = (a.rejection_rate - a.nu).abs();
            let db = (b.rejection_rate - b.nu).abs();
            da.partial_cmp(&db).unwrap().then(a.nu.partial_cmp(&b.nu).unwrap())
        })
        .expect("non-empty candidates");
    Ok(NuSweep {
        nu: best.nu,
        candidates: results,
    })
}
