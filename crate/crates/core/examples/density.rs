//! Fit both density estimators on a shared PCA and compare their scores on
//! an inlier and an outlier.

use qiguard::density::{fit_density, fit_pca, rows_to_matrix, EstimatorConfig, EstimatorKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> qiguard::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..600)
        .map(|i| {
            let center = if i % 2 == 0 { -2.0 } else { 2.0 };
            (0..20)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    center + z
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    let data = rows_to_matrix(&rows)?;
    let pca = fit_pca(&data, 8)?;
    println!("pca 20 -> 8, explained variance {:.3?}", &pca.explained_variance()[..3]);

    let inlier = vec![2.0; 20];
    let outlier = vec![8.0; 20];
    for estimator in [EstimatorKind::Gmm, EstimatorKind::Ocsvm] {
        let cfg = EstimatorConfig {
            estimator,
            pca_dim: 8,
            gmm_components: 2,
            ..EstimatorConfig::default()
        };
        let model = fit_density(&data, &pca, &cfg)?;
        println!(
            "{estimator:?}: inlier {:.3}, outlier {:.3}",
            model.score(&inlier)?.value,
            model.score(&outlier)?.value
        );
    }
    Ok(())
}
