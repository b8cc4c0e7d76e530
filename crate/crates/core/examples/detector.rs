//! Build a safe/unsafe profile, calibrate the abstain gate and operating
//! point on holdout points, then decide a few queries.

use qiguard::density::{fit_density, fit_pca, rows_to_matrix, EstimatorConfig, EstimatorKind};
use qiguard::detector::{
    calibrate_abstain, select_operating_point, ConfigTag, DetectorProfile, OperatingMode, Outcome, SafeVariant,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cloud(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..6)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    z + if j == 0 { shift } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

fn main() -> qiguard::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (safe, unsafe_) = (cloud(&mut rng, 400, 0.0), cloud(&mut rng, 400, 3.0));
    let pooled: Vec<Vec<f64>> = safe.iter().chain(&unsafe_).cloned().collect();
    let pca = fit_pca(&rows_to_matrix(&pooled)?, 4)?;
    let cfg = EstimatorConfig {
        estimator: EstimatorKind::Gmm,
        pca_dim: 4,
        gmm_components: 2,
        ..EstimatorConfig::default()
    };
    let tag = ConfigTag {
        estimator: EstimatorKind::Gmm,
        variant: SafeVariant::V3,
    };
    let mut profile = DetectorProfile::new(
        fit_density(&rows_to_matrix(&safe)?, &pca, &cfg)?,
        fit_density(&rows_to_matrix(&unsafe_)?, &pca, &cfg)?,
        tag,
    )?;

    let (hold_safe, hold_unsafe) = (cloud(&mut rng, 100, 0.0), cloud(&mut rng, 100, 3.0));
    let hold: Vec<(f64, f64)> = hold_safe
        .iter()
        .chain(&hold_unsafe)
        .map(|x| profile.scores(x))
        .collect::<Result<_, _>>()?;
    let (s, u): (Vec<f64>, Vec<f64>) = hold.iter().copied().unzip();
    let (theta_s, theta_u) = calibrate_abstain(&s, &u, 5.0)?;
    profile.set_abstain(theta_s, theta_u, Default::default());
    let labeled: Vec<(f64, bool)> = hold
        .iter()
        .enumerate()
        .map(|(i, (s, u))| (u - s, i >= hold_safe.len()))
        .collect();
    profile.tau = select_operating_point(OperatingMode::Balanced, &labeled)?;
    println!("theta_s {theta_s:.2} theta_u {theta_u:.2} tau {:.3}", profile.tau);

    for (name, x) in [
        ("safe-like", vec![0.0; 6]),
        ("unsafe-like", vec![3.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ("far away", vec![-12.0, 9.0, 0.0, 0.0, 0.0, 0.0]),
    ] {
        let d = profile.decide(&x)?;
        let mark = if d.outcome == Outcome::Abstain {
            " (out of support)"
        } else {
            ""
        };
        println!("{name:<12} {:?} delta {:.2}{mark}", d.outcome, d.delta);
    }
    Ok(())
}
