//! The synthetic style/content confound: train the 2 x 2 grid on a few
//! seeds and print the borderline columns.

use qiguard::confound::{run_confound_experiment, ConfoundFixture};
use qiguard::eval::{render_grid, PairingName};

fn main() -> qiguard::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for seed in 0..seeds {
        let t = std::time::Instant::now();
        let grid = run_confound_experiment(&ConfoundFixture {
            seed,
            ..ConfoundFixture::default()
        })?;
        if seed == 0 {
            print!("{}", render_grid(&grid));
        }
        let b = |tag: &str| grid.get(tag, PairingName::BorderlineStress).expect("cell");
        println!(
            "seed {seed} ({:.1}s): borderline auroc gmm_v3 {:.4} ocsvm_v4 {:.4}, fpr@0 {:.3} -> {:.3}",
            t.elapsed().as_secs_f64(),
            b("gmm_v3").auroc,
            b("ocsvm_v4").auroc,
            b("gmm_v3").fpr_at_tau0,
            b("ocsvm_v4").fpr_at_tau0
        );
    }
    Ok(())
}
