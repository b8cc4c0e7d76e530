use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ocsvm::median;
use crate::error::{Error, Result};

pub const DEFAULT_SUBSAMPLE: usize = 2000;

/// RBF coefficient from the median heuristic: γ = 1 / (2 m²), where m is the
/// median pairwise Euclidean distance over at most `subsample` rows drawn
/// uniformly without replacement under `seed`.
pub fn median_heuristic_gamma(data: &DMatrix<f64>, subsample: usize, seed: u64) -> Result<f64> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::Numeric(format!(
            "median heuristic needs at least 2 rows, got {n}"
        )));
    }
    let rows: Vec<usize> = if n > subsample.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, n, subsample.max(2)).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };
    let mut distances = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            distances.push((data.row(i) - data.row(j)).norm());
        }
    }
    let m = median(&mut distances);
    if !(m > 0.0) {
        return Err(Error::Numeric("degenerate data for bandwidth selection".into()));
    }
    Ok(1.0 / (2.0 * m * m))
}
