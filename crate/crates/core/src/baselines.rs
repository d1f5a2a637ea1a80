//! A k-nearest-neighbour reference classifier.
//!
//! Boosted trees should clear a much simpler bar; this module provides
//! that bar. Scoring is brute force: for each query row, compute the
//! distance to every training row, take the `k` closest (distance
//! ties resolve toward the lower training-row index), and score by the
//! positive fraction of their labels — optionally weighted by inverse
//! distance. No approximate index structures, so results are exactly
//! reproducible.
//!
//! Query rows are independent and scored on the rayon pool with
//! order-preserving collection; within a row everything is sequential,
//! so scores never depend on the worker count. The feature subset is
//! sorted internally, making scores invariant to how the caller orders
//! it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::metrics::{average_precision, summarize, EvalReport};
use crate::tune::stratified_kfold;

/// Values of `k` tried by [`tune_k`] unless the caller overrides them.
pub const DEFAULT_K_CANDIDATES: [usize; 5] = [3, 5, 7, 9, 15];

/// Floor added to distances before inversion so that exact duplicates
/// (distance zero) produce a large finite weight instead of ∞.
const WEIGHT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    Manhattan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteWeighting {
    /// Every neighbour counts equally.
    Uniform,
    /// Neighbours count with weight `1 / (distance + ε)`.
    InverseDistance,
}

/// Configuration of the nearest-neighbour scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    /// Number of neighbours; odd, so uniform votes cannot tie.
    pub k: usize,
    pub metric: DistanceMetric,
    pub weighting: VoteWeighting,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 5,
            metric: DistanceMetric::Euclidean,
            weighting: VoteWeighting::Uniform,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        validate_k(self.k)
    }
}

fn validate_k(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::Training(format!(
            "k = {k} must be a positive odd number"
        )));
    }
    Ok(())
}

/// Sorted, validated copy of a feature subset.
fn checked_features(cohort: &Cohort, features: &[usize]) -> Result<Vec<usize>> {
    if features.is_empty() {
        return Err(Error::Training(
            "the feature subset must not be empty".into(),
        ));
    }
    let mut sorted = features.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::Training(format!(
                "feature {} appears twice in the subset",
                pair[0]
            )));
        }
    }
    if let Some(&j) = sorted.last() {
        if j >= cohort.n_features() {
            return Err(Error::Training(format!(
                "feature {j} out of range for {} features",
                cohort.n_features()
            )));
        }
    }
    Ok(sorted)
}

fn distance(metric: DistanceMetric, a: &[f64], b: &[f64], features: &[usize]) -> f64 {
    match metric {
        DistanceMetric::Euclidean => features
            .iter()
            .map(|&j| {
                let d = a[j] - b[j];
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        DistanceMetric::Manhattan => features.iter().map(|&j| (a[j] - b[j]).abs()).sum(),
    }
}

/// The `k_max` nearest training rows to `x` as `(distance, label)`,
/// closest first; equal distances order by training-row index.
fn nearest(
    train: &Cohort,
    features: &[usize],
    metric: DistanceMetric,
    x: &[f64],
    k_max: usize,
) -> Vec<(f64, u8)> {
    let mut all: Vec<(f64, usize)> = (0..train.n_subjects())
        .map(|i| (distance(metric, x, train.row(i), features), i))
        .collect();
    all.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("feature values are finite")
            .then(a.1.cmp(&b.1))
    });
    all.truncate(k_max);
    all.into_iter()
        .map(|(d, i)| (d, train.labels()[i]))
        .collect()
}

/// Positive-class score from the `k` closest neighbours.
fn vote(neighbors: &[(f64, u8)], k: usize, weighting: VoteWeighting) -> f64 {
    let picked = &neighbors[..k];
    match weighting {
        VoteWeighting::Uniform => {
            picked.iter().map(|&(_, y)| f64::from(y)).sum::<f64>() / k as f64
        }
        VoteWeighting::InverseDistance => {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(d, y) in picked {
                let w = 1.0 / (d + WEIGHT_EPS);
                num += w * f64::from(y);
                den += w;
            }
            num / den
        }
    }
}

fn check_same_schema(train: &Cohort, test: &Cohort) -> Result<()> {
    if train.feature_names() != test.feature_names() {
        return Err(Error::Prediction(
            "query cohort columns do not match the training cohort".into(),
        ));
    }
    Ok(())
}

/// Score every row of `test` against `train`. Scores are positive
/// fractions in `[0, 1]`.
pub fn knn_scores(
    train: &Cohort,
    test: &Cohort,
    features: &[usize],
    config: &KnnConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_same_schema(train, test)?;
    let features = checked_features(train, features)?;
    if config.k > train.n_subjects() {
        return Err(Error::Training(format!(
            "k = {} exceeds the {} training subjects",
            config.k,
            train.n_subjects()
        )));
    }
    Ok((0..test.n_subjects())
        .into_par_iter()
        .map(|i| {
            let neighbors = nearest(train, &features, config.metric, test.row(i), config.k);
            vote(&neighbors, config.k, config.weighting)
        })
        .collect())
}

/// Score `test` and summarize against its labels at `threshold`.
pub fn knn_evaluate(
    train: &Cohort,
    test: &Cohort,
    features: &[usize],
    config: &KnnConfig,
    threshold: f64,
) -> Result<EvalReport> {
    let scores = knn_scores(train, test, features, config)?;
    summarize(&scores, test.labels(), threshold)
}

/// Cross-validation outcome for one value of `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnCvResult {
    pub k: usize,
    /// Average precision on each validation fold.
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

/// Outcome of [`tune_k`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnTuneReport {
    pub best_k: usize,
    /// One entry per candidate, ascending in `k`.
    pub results: Vec<KnnCvResult>,
    pub folds: usize,
    pub seed: u64,
    pub metric: DistanceMetric,
    pub weighting: VoteWeighting,
}

/// Choose `k` by stratified cross-validated average precision. Ties
/// prefer the smaller (simpler) `k`. Neighbour orderings are computed
/// once per fold and shared across all candidates.
pub fn tune_k(
    cohort: &Cohort,
    features: &[usize],
    candidates: &[usize],
    config: &KnnConfig,
    folds: usize,
    seed: u64,
) -> Result<KnnTuneReport> {
    if candidates.is_empty() {
        return Err(Error::Tuning("no candidate values of k".into()));
    }
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    for &k in &candidates {
        validate_k(k)?;
    }
    let k_max = *candidates.last().expect("candidates are non-empty");
    let features = checked_features(cohort, features)?;
    let fold_rows = stratified_kfold(cohort, folds, seed)?;

    // Per fold: (per-candidate AP scores), computed from one shared
    // neighbour ordering per validation row.
    let per_fold: Vec<Result<Vec<f64>>> = fold_rows
        .par_iter()
        .map(|val_rows| {
            let mut in_val = vec![false; cohort.n_subjects()];
            for &r in val_rows {
                in_val[r] = true;
            }
            let train_rows: Vec<usize> =
                (0..cohort.n_subjects()).filter(|&r| !in_val[r]).collect();
            if k_max > train_rows.len() {
                return Err(Error::Tuning(format!(
                    "k = {k_max} exceeds the {} training subjects of a fold",
                    train_rows.len()
                )));
            }
            let train = cohort.subset_rows(&train_rows)?;
            let val = cohort.subset_rows(val_rows)?;
            let orderings: Vec<Vec<(f64, u8)>> = (0..val.n_subjects())
                .map(|i| nearest(&train, &features, config.metric, val.row(i), k_max))
                .collect();
            candidates
                .iter()
                .map(|&k| {
                    let scores: Vec<f64> = orderings
                        .iter()
                        .map(|neighbors| vote(neighbors, k, config.weighting))
                        .collect();
                    average_precision(&scores, val.labels())
                })
                .collect()
        })
        .collect();

    let mut by_candidate = vec![Vec::with_capacity(fold_rows.len()); candidates.len()];
    for fold in per_fold {
        for (slot, score) in by_candidate.iter_mut().zip(fold?) {
            slot.push(score);
        }
    }
    let results: Vec<KnnCvResult> = candidates
        .iter()
        .zip(by_candidate)
        .map(|(&k, fold_scores)| {
            let mean_score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            KnnCvResult {
                k,
                fold_scores,
                mean_score,
            }
        })
        .collect();
    let mut best_k = results[0].k;
    let mut best_score = results[0].mean_score;
    for r in &results[1..] {
        if r.mean_score > best_score {
            best_score = r.mean_score;
            best_k = r.k;
        }
    }
    Ok(KnnTuneReport {
        best_k,
        results,
        folds,
        seed,
        metric: config.metric,
        weighting: config.weighting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_cohort, SimConfig};
    use proptest::prelude::*;

    fn cohort_1d(values: &[f64], labels: &[u8]) -> Cohort {
        let ids = (0..values.len()).map(|i| format!("s{i}")).collect();
        let names = vec!["Feature1".to_string()];
        Cohort::from_parts(ids, labels.to_vec(), names, values.to_vec()).unwrap()
    }

    fn cohort_2d(rows: &[[f64; 2]], labels: &[u8]) -> Cohort {
        let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
        let names = vec!["Feature1".to_string(), "Feature2".to_string()];
        let values = rows.iter().flatten().copied().collect();
        Cohort::from_parts(ids, labels.to_vec(), names, values).unwrap()
    }

    #[test]
    fn uniform_vote_is_the_positive_fraction() {
        let train = cohort_1d(&[0.1, 0.2, 0.3, 0.8, 0.9], &[1, 1, 0, 0, 1]);
        let test = cohort_1d(&[0.15, 0.85], &[1, 0]);
        let config = KnnConfig {
            k: 3,
            ..KnnConfig::default()
        };
        let scores = knn_scores(&train, &test, &[0], &config).unwrap();
        // 0.15 → neighbours 0.1, 0.2, 0.3 with labels 1, 1, 0.
        assert!((scores[0] - 2.0 / 3.0).abs() < 1e-15);
        // 0.85 → neighbours 0.8, 0.9, 0.3 with labels 0, 1, 0.
        assert!((scores[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_ties_resolve_to_the_earlier_row() {
        // Dyadic values make both training rows exactly 0.25 away;
        // the earlier row wins the tie.
        let train = cohort_1d(&[0.25, 0.75], &[0, 1]);
        let test = cohort_1d(&[0.5], &[1]);
        let config = KnnConfig {
            k: 1,
            ..KnnConfig::default()
        };
        let scores = knn_scores(&train, &test, &[0], &config).unwrap();
        assert_eq!(scores[0], 0.0);

        // Swapping the rows flips the winner.
        let train = cohort_1d(&[0.75, 0.25], &[1, 0]);
        let scores = knn_scores(&train, &test, &[0], &config).unwrap();
        assert_eq!(scores[0], 1.0);
    }

    #[test]
    fn inverse_distance_weights_hand_value() {
        let train = cohort_1d(&[0.0, 0.9], &[0, 1]);
        let test = cohort_1d(&[0.6], &[1]);
        let config = KnnConfig {
            k: 2,
            weighting: VoteWeighting::InverseDistance,
            ..KnnConfig::default()
        };
        // Hmm: k = 2 is even — construction below uses k = 3 instead.
        assert!(knn_scores(&train, &test, &[0], &config).is_err());

        let train = cohort_1d(&[0.0, 0.9, 1.0], &[0, 1, 0]);
        let config = KnnConfig {
            k: 3,
            weighting: VoteWeighting::InverseDistance,
            ..KnnConfig::default()
        };
        let scores = knn_scores(&train, &test, &[0], &config).unwrap();
        // Distances 0.6, 0.3, 0.4; only the middle row is positive.
        let (w0, w1, w2) = (1.0 / 0.6, 1.0 / 0.3, 1.0 / 0.4);
        let expected = w1 / (w0 + w1 + w2);
        assert!((scores[0] - expected).abs() < 1e-9, "{}", scores[0]);
    }

    #[test]
    fn exact_duplicate_dominates_inverse_distance_vote() {
        let train = cohort_1d(&[0.4, 0.1, 0.9], &[1, 0, 0]);
        let test = cohort_1d(&[0.4], &[1]);
        let config = KnnConfig {
            k: 3,
            weighting: VoteWeighting::InverseDistance,
            ..KnnConfig::default()
        };
        let scores = knn_scores(&train, &test, &[0], &config).unwrap();
        assert!(scores[0] > 0.999, "{}", scores[0]);
    }

    #[test]
    fn metric_changes_the_neighbourhood() {
        // From the origin: A is Euclidean-closer, B Manhattan-closer.
        let train = cohort_2d(&[[0.5, 0.5], [0.8, 0.0]], &[1, 0]);
        let test = cohort_2d(&[[0.0, 0.0]], &[0]);
        let euclidean = KnnConfig {
            k: 1,
            ..KnnConfig::default()
        };
        let manhattan = KnnConfig {
            k: 1,
            metric: DistanceMetric::Manhattan,
            ..KnnConfig::default()
        };
        assert_eq!(knn_scores(&train, &test, &[0, 1], &euclidean).unwrap()[0], 1.0);
        assert_eq!(knn_scores(&train, &test, &[0, 1], &manhattan).unwrap()[0], 0.0);
    }

    #[test]
    fn feature_subset_order_does_not_matter() {
        let cohort = simulate_cohort(&SimConfig {
            n_subjects: 80,
            n_features: 4,
            prevalence: 0.3,
            seed: 23,
            risk_features: vec![0],
            protective_features: vec![],
            duplicate_pairs: vec![],
            ..SimConfig::default()
        })
        .unwrap();
        let config = KnnConfig::default();
        let forward = knn_scores(&cohort, &cohort, &[0, 1, 2, 3], &config).unwrap();
        let shuffled = knn_scores(&cohort, &cohort, &[2, 0, 3, 1], &config).unwrap();
        assert_eq!(forward, shuffled);
    }

    #[test]
    fn rejects_invalid_configurations() {
        let train = cohort_1d(&[0.1, 0.5, 0.9], &[0, 1, 0]);
        let test = cohort_1d(&[0.5], &[1]);
        let base = KnnConfig::default();
        // Even or zero k.
        for k in [0, 2, 4] {
            let config = KnnConfig { k, ..base };
            assert!(knn_scores(&train, &test, &[0], &config).is_err());
        }
        // k beyond the training size.
        let config = KnnConfig { k: 5, ..base };
        assert!(knn_scores(&train, &test, &[0], &config).is_err());
        // Bad feature subsets.
        let config = KnnConfig { k: 1, ..base };
        assert!(knn_scores(&train, &test, &[], &config).is_err());
        assert!(knn_scores(&train, &test, &[0, 0], &config).is_err());
        assert!(knn_scores(&train, &test, &[7], &config).is_err());
        // Mismatched schema.
        let other = cohort_2d(&[[0.5, 0.5]], &[1]);
        assert!(knn_scores(&train, &other, &[0], &config).is_err());
    }

    #[test]
    fn evaluate_scores_separable_data_perfectly() {
        // Positives cluster at 0.9, negatives at 0.1.
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            values.push(0.1 + i as f64 * 0.004);
            labels.push(0);
            values.push(0.9 - i as f64 * 0.004);
            labels.push(1);
        }
        let cohort = cohort_1d(&values, &labels);
        let report = knn_evaluate(&cohort, &cohort, &[0], &KnnConfig::default(), 0.5).unwrap();
        assert_eq!(report.auc_roc, 1.0);
        assert_eq!(report.auc_pr, 1.0);
        assert_eq!(report.confusion.false_negatives, 0);
        assert_eq!(report.confusion.false_positives, 0);
    }

    #[test]
    fn tune_k_prefers_smaller_k_on_ties() {
        // Perfectly separated clusters: every candidate k scores AP 1,
        // so the tie must resolve to the smallest.
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            values.push(0.05 + i as f64 * 0.01);
            labels.push(0);
            values.push(0.75 + i as f64 * 0.01);
            labels.push(1);
        }
        let cohort = cohort_1d(&values, &labels);
        let report = tune_k(
            &cohort,
            &[0],
            &[9, 3, 5],
            &KnnConfig::default(),
            4,
            7,
        )
        .unwrap();
        let ks: Vec<usize> = report.results.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![3, 5, 9], "results come back sorted by k");
        for r in &report.results {
            assert_eq!(r.fold_scores.len(), 4);
            assert_eq!(r.mean_score, 1.0);
        }
        assert_eq!(report.best_k, 3);
    }

    #[test]
    fn tune_k_selects_a_plausible_k_on_noisy_data() {
        let cohort = simulate_cohort(&SimConfig {
            n_subjects: 200,
            n_features: 3,
            prevalence: 0.3,
            seed: 5,
            risk_features: vec![0],
            protective_features: vec![],
            duplicate_pairs: vec![],
            ..SimConfig::default()
        })
        .unwrap();
        let report = tune_k(
            &cohort,
            &[0, 1, 2],
            &DEFAULT_K_CANDIDATES,
            &KnnConfig::default(),
            5,
            0,
        )
        .unwrap();
        assert!(DEFAULT_K_CANDIDATES.contains(&report.best_k));
        let best = report
            .results
            .iter()
            .find(|r| r.k == report.best_k)
            .unwrap();
        for r in &report.results {
            assert!(best.mean_score >= r.mean_score);
        }
        // Tuning twice with the same seed is bit-identical.
        let again = tune_k(
            &cohort,
            &[0, 1, 2],
            &DEFAULT_K_CANDIDATES,
            &KnnConfig::default(),
            5,
            0,
        )
        .unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn tune_k_rejects_oversized_candidates() {
        let train = cohort_1d(
            &[0.1, 0.2, 0.3, 0.6, 0.7, 0.8, 0.15, 0.25, 0.65, 0.75],
            &[0, 0, 0, 1, 1, 1, 0, 0, 1, 1],
        );
        let err = tune_k(&train, &[0], &[99], &KnnConfig::default(), 2, 0).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
        assert!(tune_k(&train, &[0], &[], &KnnConfig::default(), 2, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        // Scores are always valid probabilities-of-positives, and with
        // uniform weighting they are exact multiples of 1/k.
        #[test]
        fn prop_scores_are_unit_interval_fractions(seed in 0u64..500) {
            let cohort = simulate_cohort(&SimConfig {
                n_subjects: 50,
                n_features: 3,
                prevalence: 0.3,
                seed,
                risk_features: vec![],
                protective_features: vec![],
                duplicate_pairs: vec![],
                ..SimConfig::default()
            }).unwrap();
            let config = KnnConfig { k: 5, ..KnnConfig::default() };
            let scores = knn_scores(&cohort, &cohort, &[0, 1, 2], &config).unwrap();
            for s in scores {
                prop_assert!((0.0..=1.0).contains(&s));
                let votes = s * 5.0;
                prop_assert!((votes - votes.round()).abs() < 1e-12);
            }
        }
    }
}
