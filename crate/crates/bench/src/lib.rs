//! Shared fixtures for the criterion benchmarks: a mid-sized planted
//! cohort and a synthetic score/label sample, both deterministic.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskboost_core::{simulate_cohort, Cohort, SimConfig};

/// A 1,500-subject, 20-feature cohort with planted risk and protective
/// signal — big enough that fitting and attribution dominate setup.
pub fn bench_cohort() -> Cohort {
    simulate_cohort(&SimConfig {
        n_subjects: 1_500,
        n_features: 20,
        prevalence: 0.2,
        seed: 5,
        noise_scale: 0.15,
        risk_features: vec![2, 5],
        protective_features: vec![9],
        duplicate_pairs: Vec::new(),
    })
    .expect("bench cohort simulates")
}

/// Scores in `[0, 1]` and labels with roughly 20% positives, suitable
/// for ranking-metric benchmarks.
pub fn scored_sample(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new_inclusive(0.0f64, 1.0);
    let scores: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();
    let labels: Vec<u8> = scores
        .iter()
        .map(|s| u8::from(unit.sample(&mut rng) < 0.1 + 0.2 * s))
        .collect();
    (scores, labels)
}

/// Two Gaussian-ish samples with a small location offset, for the
/// two-sample test benchmark.
pub fn paired_groups(n_a: usize, n_b: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0f64, 1.0);
    let noise = |rng: &mut ChaCha8Rng| -> f64 {
        // Irwin-Hall sum of 12 uniforms: mean 6, variance 1.
        (0..12).map(|_| unit.sample(rng)).sum::<f64>() - 6.0
    };
    let a: Vec<f64> = (0..n_a).map(|_| 0.4 + 0.1 * noise(&mut rng)).collect();
    let b: Vec<f64> = (0..n_b).map(|_| 0.45 + 0.12 * noise(&mut rng)).collect();
    (a, b)
}
