//! Threshold-free and fixed-recall metrics on a toy score set.

use qiguard::metrics::{auroc, fpr_at_tpr, rate_above};

fn main() -> qiguard::Result<()> {
    let unsafe_scores = [2.1, 1.7, 1.7, 0.9, 0.4, -0.2];
    let safe_scores = [0.5, 0.1, -0.3, -0.9, -1.4, 1.7];
    println!("auroc   {:.4}", auroc(&unsafe_scores, &safe_scores)?);
    println!("fpr95   {:.4}", fpr_at_tpr(&unsafe_scores, &safe_scores, 0.95)?);
    println!("fpr90   {:.4}", fpr_at_tpr(&unsafe_scores, &safe_scores, 0.90)?);
    println!("tpr@0   {:.4}", rate_above(&unsafe_scores, 0.0));
    println!("fpr@0   {:.4}", rate_above(&safe_scores, 0.0));
    Ok(())
}
