//! Shared oracles and fixture loaders for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use qiguard::record::{AdversarialMode, AxisAssignment, Domain, Framing, Label, Placement, QiClass, Record};
use qiguard::validators::{validate_record, ValidatorRuleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod mock;

// ---- validators ----

#[derive(Debug, Deserialize)]
pub struct ValidatorCase {
    pub group: String,
    #[serde(default)]
    pub rule: Option<String>,
    pub label: Label,
    pub text: String,
}

#[derive(Deserialize)]
struct CaseFile {
    cases: Vec<ValidatorCase>,
}

pub fn validator_cases(domain: Domain) -> Vec<ValidatorCase> {
    let path = fixture_path(&format!("validators/{}.toml", domain.as_str()));
    let text = std::fs::read_to_string(&path).unwrap();
    toml::from_str::<CaseFile>(&text).unwrap().cases
}

pub fn case_record(domain: Domain, case: &ValidatorCase, i: usize) -> Record {
    Record {
        id: format!("{}-{i}", domain.as_str()),
        domain,
        question: "Can you help me understand this?".into(),
        answer: case.text.clone(),
        label: case.label,
        generator: None,
        axes: (case.label == Label::Unsafe).then(|| {
            AxisAssignment::new(
                [QiClass::Age, QiClass::Occupation],
                Framing::CaseVoice,
                Placement::MidAnswer,
                AdversarialMode::None,
            )
            .unwrap()
        }),
        subtype: (case.label == Label::BorderlineSafe)
            .then_some(qiguard::record::BorderlineSubtype::PublicGuidelineQuote),
        source: "fixture".into(),
        extra: Default::default(),
    }
}

/// Misclassified cases of one domain as human-readable lines.
pub fn validator_errors(domain: Domain) -> (usize, Vec<String>) {
    let rules = ValidatorRuleSet::builtin(domain);
    let cases = validator_cases(domain);
    let mut errors = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let verdict = validate_record(&case_record(domain, case, i), &rules);
        let ok = match case.group.as_str() {
            "direct_id" => {
                let rule = case.rule.as_deref().unwrap();
                !verdict.accepted && verdict.violations.iter().any(|v| v.rule_id == rule)
            }
            _ => verdict.accepted,
        };
        if !ok {
            errors.push(format!(
                "{domain} #{i} [{}] {:?}: {:?}",
                case.group, case.text, verdict.violations
            ));
        }
    }
    (cases.len(), errors)
}

// ---- metrics ----

/// O(n²) pair count, ties credited one half, as an exact fraction.
pub fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &p in pos {
        for &n in neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

/// Tries every threshold between consecutive distinct scores and beyond both ends.
pub fn brute_fpr_at_tpr(pos: &[f64], neg: &[f64], target: f64) -> f64 {
    let mut values: Vec<f64> = pos.iter().chain(neg).copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY, f64::INFINITY];
    for w in values.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    let mut best = 1.0f64;
    for t in thresholds {
        let tpr = pos.iter().filter(|&&p| p > t).count() as f64 / pos.len() as f64;
        if tpr >= target - 1e-12 {
            let fpr = neg.iter().filter(|&&n| n > t).count() as f64 / neg.len() as f64;
            best = best.min(fpr);
        }
    }
    best
}

/// Scores drawn from a small grid so ties are common.
pub fn tied_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.random_range(0..40u32)) / 4.0).collect()
}

// ---- one-class SVM ----

/// Projection onto {a : 0 ≤ a ≤ c, Σa = 1} by bisection on the shift.
pub fn project_capped_simplex(v: &[f64], c: f64) -> Vec<f64> {
    let clip = |shift: f64| -> Vec<f64> { v.iter().map(|&x| (x - shift).clamp(0.0, c)).collect() };
    let (mut lo, mut hi) = (
        v.iter().copied().fold(f64::INFINITY, f64::min) - c - 1.0,
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0,
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip(mid).iter().sum::<f64>() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp()
}

/// Dense projected-gradient solve of min ½ aᵀKa over the capped simplex
/// with C = 1/(νn). Returns (alphas, rho).
pub fn qp_oracle(points: &[Vec<f64>], nu: f64, gamma: f64) -> (Vec<f64>, f64) {
    let n = points.len();
    let c = 1.0 / (nu * n as f64);
    let k: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| rbf(a, b, gamma)).collect())
        .collect();
    // Lipschitz constant of the gradient ≤ max row sum.
    let lip = k.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip;
    let mut a = project_capped_simplex(&vec![1.0 / n as f64; n], c);
    for _ in 0..200_000 {
        let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * a[j]).sum()).collect();
        let next = project_capped_simplex(&a.iter().zip(&g).map(|(x, gi)| x - step * gi).collect::<Vec<_>>(), c);
        let moved = next.iter().zip(&a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        a = next;
        if moved < 1e-15 {
            break;
        }
    }
    let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * a[j]).sum()).collect();
    let eps = 1e-9 * c.max(1.0);
    let free: Vec<f64> = (0..n).filter(|&i| a[i] > eps && a[i] < c - eps).map(|i| g[i]).collect();
    let rho = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else {
        // Midpoint of the KKT interval.
        let lower = (0..n)
            .filter(|&i| a[i] <= eps)
            .map(|i| g[i])
            .fold(f64::INFINITY, f64::min);
        let upper = (0..n)
            .filter(|&i| a[i] >= c - eps)
            .map(|i| g[i])
            .fold(f64::NEG_INFINITY, f64::max);
        match (lower.is_finite(), upper.is_finite()) {
            (true, true) => 0.5 * (lower + upper),
            (true, false) => lower,
            (false, true) => upper,
            _ => 0.0,
        }
    };
    (a, rho)
}

pub fn oracle_decision(points: &[Vec<f64>], alphas: &[f64], rho: f64, gamma: f64, x: &[f64]) -> f64 {
    points
        .iter()
        .zip(alphas)
        .map(|(p, a)| a * rbf(p, x, gamma))
        .sum::<f64>()
        - rho
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}
