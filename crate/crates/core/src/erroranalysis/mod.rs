//! Statistical comparison of prediction-error groups.
//!
//! After thresholding risk scores, subjects fall into the four
//! confusion-matrix cells. The central question this module answers:
//! do the events the model misses (false negatives) differ
//! systematically from the events it catches (true positives)?  Each
//! feature is compared across the two groups with Welch's unequal
//! variance t-test, results are ordered by p-value, and a Bonferroni
//! column keeps the multiple-comparison caveat visible. A complementary
//! case study picks the highest-scoring false positive apart with its
//! per-feature attributions.
//!
//! Welch's statistic for groups `a` and `b` uses sample variances
//! (n − 1 denominators) and the Welch–Satterthwaite degrees of
//! freedom; the two-sided p-value comes from the exact Student-t tail
//! in [`special`]. When both groups are exactly constant the statistic
//! is degenerate: equal means report `t = 0, p = 1`, unequal means
//! report the sentinels [`DEGENERATE_T`]/[`DEGENERATE_P`] so reports
//! stay finite and JSON-safe.

pub mod special;

pub use special::{ln_gamma, regularized_incomplete_beta, student_t_cdf, two_sided_t_p};

use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::explain::AttributionSet;
use crate::explain::Waterfall;

/// Magnitude reported for the t statistic when both groups are
/// constant with different means (a zero-variance separation).
pub const DEGENERATE_T: f64 = 1e16;

/// p-value paired with [`DEGENERATE_T`].
pub const DEGENERATE_P: f64 = 1e-16;

/// Default significance level for flagging features.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Group means a prior clinical evaluation reported for the four
/// features that most separated missed events from detected ones.
/// Indices refer to the standard 150-feature panel. These are context
/// for reading a fresh report side by side, not inputs to any
/// computation.
pub const PRIOR_COHORT_COMPARISONS: [PriorComparison; 4] = [
    PriorComparison {
        feature_index: 80,
        mean_false_negative: 0.1038,
        mean_true_positive: 0.0205,
    },
    PriorComparison {
        feature_index: 53,
        mean_false_negative: 0.0764,
        mean_true_positive: 0.1194,
    },
    PriorComparison {
        feature_index: 72,
        mean_false_negative: 0.0637,
        mean_true_positive: 0.0118,
    },
    PriorComparison {
        feature_index: 32,
        mean_false_negative: 0.2033,
        mean_true_positive: 0.0645,
    },
];

/// One row of [`PRIOR_COHORT_COMPARISONS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorComparison {
    pub feature_index: usize,
    pub mean_false_negative: f64,
    pub mean_true_positive: f64,
}

/// Welch's t-test between two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTTest {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Sample variance (n − 1 denominator) of each group.
    pub var_a: f64,
    pub var_b: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn mean_and_sample_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance t-test, two-sided. Each group needs at
/// least two finite values. Exchanging the groups flips the sign of
/// `t` and leaves `df` and `p_value` bit-identical.
pub fn welch_t_test(group_a: &[f64], group_b: &[f64]) -> Result<WelchTTest> {
    for (name, group) in [("first", group_a), ("second", group_b)] {
        if group.len() < 2 {
            return Err(Error::Analysis(format!(
                "the {name} group has {} value(s); Welch's t-test needs at least 2 per group",
                group.len()
            )));
        }
        if group.iter().any(|v| !v.is_finite()) {
            return Err(Error::Analysis(format!(
                "the {name} group contains a non-finite value"
            )));
        }
    }
    let (n_a, n_b) = (group_a.len(), group_b.len());
    let (mean_a, var_a) = mean_and_sample_var(group_a);
    let (mean_b, var_b) = mean_and_sample_var(group_b);
    let sq_a = var_a / n_a as f64;
    let sq_b = var_b / n_b as f64;
    let se_squared = sq_a + sq_b;

    if se_squared == 0.0 {
        // Both groups are exactly constant; the statistic is formally
        // 0/0 or ±∞/0. Report finite sentinels instead.
        let (t, p_value) = if mean_a == mean_b {
            (0.0, 1.0)
        } else {
            (DEGENERATE_T.copysign(mean_a - mean_b), DEGENERATE_P)
        };
        return Ok(WelchTTest {
            t,
            df: (n_a + n_b - 2) as f64,
            p_value,
            mean_a,
            mean_b,
            var_a,
            var_b,
            n_a,
            n_b,
        });
    }

    let t = (mean_a - mean_b) / se_squared.sqrt();
    let df = se_squared * se_squared
        / (sq_a * sq_a / (n_a as f64 - 1.0) + sq_b * sq_b / (n_b as f64 - 1.0));
    let p_value = two_sided_t_p(t, df)?;
    Ok(WelchTTest {
        t,
        df,
        p_value,
        mean_a,
        mean_b,
        var_a,
        var_b,
        n_a,
        n_b,
    })
}

/// Row indices of each confusion-matrix cell at a threshold. Scores
/// equal to the threshold count as predicted positive, matching the
/// confusion-matrix convention used everywhere in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomePartition {
    pub threshold: f64,
    pub true_positives: Vec<usize>,
    pub false_positives: Vec<usize>,
    pub true_negatives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// Split row indices into the four outcome groups.
pub fn partition_outcomes(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<OutcomePartition> {
    if scores.len() != labels.len() {
        return Err(Error::Analysis(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !threshold.is_finite() {
        return Err(Error::Analysis(format!(
            "threshold {threshold} must be finite"
        )));
    }
    let mut partition = OutcomePartition {
        threshold,
        true_positives: Vec::new(),
        false_positives: Vec::new(),
        true_negatives: Vec::new(),
        false_negatives: Vec::new(),
    };
    for (i, (&score, &label)) in scores.iter().zip(labels).enumerate() {
        if !score.is_finite() {
            return Err(Error::Analysis(format!(
                "score {score} at row {i} must be finite"
            )));
        }
        let predicted_positive = score >= threshold;
        match (label, predicted_positive) {
            (1, true) => partition.true_positives.push(i),
            (1, false) => partition.false_negatives.push(i),
            (0, true) => partition.false_positives.push(i),
            (0, false) => partition.true_negatives.push(i),
            _ => {
                return Err(Error::Analysis(format!(
                    "label {label} at row {i} must be 0 or 1"
                )))
            }
        }
    }
    Ok(partition)
}

/// One feature's false-negative vs. true-positive comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub feature_index: usize,
    pub feature_name: String,
    pub mean_false_negative: f64,
    pub mean_true_positive: f64,
    /// Welch t statistic; positive when missed events have the higher
    /// mean.
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    /// `min(1, p · features_tested)`.
    pub bonferroni_p: f64,
    /// Whether the raw p-value clears the report's significance level.
    pub flagged: bool,
}

/// Feature-by-feature comparison of missed vs. detected events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysisReport {
    pub threshold: f64,
    pub alpha: f64,
    pub n_false_negatives: usize,
    pub n_true_positives: usize,
    /// Every feature, most significant first (ties by feature index).
    pub comparisons: Vec<FeatureComparison>,
}

/// Compare every feature between false negatives and true positives at
/// `threshold`. Both groups need at least two members — with fewer the
/// test is undefined, and the error says so and suggests moving the
/// threshold.
pub fn fn_vs_tp_report(
    cohort: &Cohort,
    scores: &[f64],
    threshold: f64,
    alpha: f64,
) -> Result<ErrorAnalysisReport> {
    if scores.len() != cohort.n_subjects() {
        return Err(Error::Analysis(format!(
            "{} scores for {} subjects",
            scores.len(),
            cohort.n_subjects()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Analysis(format!(
            "significance level {alpha} must be in (0, 1)"
        )));
    }
    let partition = partition_outcomes(scores, cohort.labels(), threshold)?;
    for (name, group) in [
        ("false negatives", &partition.false_negatives),
        ("true positives", &partition.true_positives),
    ] {
        if group.len() < 2 {
            return Err(Error::Analysis(format!(
                "only {} {name} at threshold {threshold}; the comparison needs at least 2 \
                 per group — choose a different threshold",
                group.len()
            )));
        }
    }

    let n_features = cohort.n_features();
    let mut comparisons = Vec::with_capacity(n_features);
    let mut fn_values = vec![0.0; partition.false_negatives.len()];
    let mut tp_values = vec![0.0; partition.true_positives.len()];
    for j in 0..n_features {
        for (slot, &i) in fn_values.iter_mut().zip(&partition.false_negatives) {
            *slot = cohort.value(i, j);
        }
        for (slot, &i) in tp_values.iter_mut().zip(&partition.true_positives) {
            *slot = cohort.value(i, j);
        }
        let test = welch_t_test(&fn_values, &tp_values)?;
        comparisons.push(FeatureComparison {
            feature_index: j,
            feature_name: cohort.feature_names()[j].clone(),
            mean_false_negative: test.mean_a,
            mean_true_positive: test.mean_b,
            t: test.t,
            df: test.df,
            p_value: test.p_value,
            bonferroni_p: (test.p_value * n_features as f64).min(1.0),
            flagged: test.p_value < alpha,
        });
    }
    comparisons.sort_by(|a, b| {
        a.p_value
            .partial_cmp(&b.p_value)
            .expect("p-values are finite")
            .then(a.feature_index.cmp(&b.feature_index))
    });
    Ok(ErrorAnalysisReport {
        threshold,
        alpha,
        n_false_negatives: partition.false_negatives.len(),
        n_true_positives: partition.true_positives.len(),
        comparisons,
    })
}

/// The highest-scoring false positive, decomposed feature by feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub row_index: usize,
    pub sample_id: String,
    pub score: f64,
    pub waterfall: Waterfall,
}

/// Pick the false positive with the highest score (ties go to the
/// earlier row) and return its attribution waterfall. `None` when the
/// threshold produces no false positives.
pub fn fp_case_study(
    cohort: &Cohort,
    scores: &[f64],
    threshold: f64,
    attributions: &AttributionSet,
    top_k: usize,
) -> Result<Option<CaseStudy>> {
    if scores.len() != cohort.n_subjects() {
        return Err(Error::Analysis(format!(
            "{} scores for {} subjects",
            scores.len(),
            cohort.n_subjects()
        )));
    }
    if attributions.sample_ids != cohort.subject_ids()
        || attributions.feature_names != cohort.feature_names()
    {
        return Err(Error::Analysis(
            "attributions were not computed on this cohort".into(),
        ));
    }
    let partition = partition_outcomes(scores, cohort.labels(), threshold)?;
    let mut best: Option<usize> = None;
    for &i in &partition.false_positives {
        if best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    let Some(row_index) = best else {
        return Ok(None);
    };
    Ok(Some(CaseStudy {
        row_index,
        sample_id: cohort.subject_ids()[row_index].clone(),
        score: scores[row_index],
        waterfall: attributions.waterfall(row_index, top_k)?,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cohort;
    use crate::explain::explain_cohort;
    use crate::gbdt::{fit, TrainConfig};

    fn cohort_with(labels: Vec<u8>, columns: Vec<Vec<f64>>) -> Cohort {
        let n = labels.len();
        let m = columns.len();
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        let names = (1..=m).map(|j| format!("Feature{j}")).collect();
        let mut values = vec![0.0; n * m];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                values[i * m + j] = v;
            }
        }
        Cohort::from_parts(ids, labels, names, values).unwrap()
    }

    #[test]
    fn welch_matches_reference_implementation() {
        // Cross-checked against SciPy:
        // ttest_ind([1,2,3,4,5], [2,4,6], equal_var=False).
        let test = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((test.t - -0.7385489458759964).abs() < 1e-14, "{}", test.t);
        assert!((test.df - 3.5328467153284676).abs() < 1e-12, "{}", test.df);
        assert!(
            (test.p_value - 0.5062141716528479).abs() < 1e-12,
            "{}",
            test.p_value
        );
        assert_eq!(test.mean_a, 3.0);
        assert_eq!(test.mean_b, 4.0);
        assert!((test.var_a - 2.5).abs() < 1e-15);
        assert!((test.var_b - 4.0).abs() < 1e-15);
    }

    #[test]
    fn two_sided_p_matches_reference_tail() {
        // SciPy: betainc(5, 0.5, 10/14) = two-sided p for t = 2, df = 10.
        let p = two_sided_t_p(2.0, 10.0).unwrap();
        assert!((p - 0.07338803477074037).abs() < 1e-13, "{p}");
        // And the matching CDF value: t.cdf(2, 10).
        let cdf = student_t_cdf(2.0, 10.0).unwrap();
        assert!((cdf - 0.9633059826146297).abs() < 1e-13, "{cdf}");
    }

    #[test]
    fn welch_is_symmetric_in_group_order() {
        let a = [0.12, 0.3, 0.44, 0.21, 0.37];
        let b = [0.52, 0.31, 0.6, 0.4];
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.df, ba.df);
        assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn welch_equal_means_give_t_zero_p_one() {
        // Same mean (dyadic values, so exactly equal in floating
        // point), different spread: exact zero and exact one.
        let test = welch_t_test(&[0.125, 0.375], &[0.0, 0.25, 0.5]).unwrap();
        assert_eq!(test.t, 0.0);
        assert_eq!(test.p_value, 1.0);
    }

    #[test]
    fn welch_degenerate_sentinels() {
        // Both constant, equal: no evidence of difference.
        let same = welch_t_test(&[0.2; 5], &[0.2; 4]).unwrap();
        assert_eq!(same.t, 0.0);
        assert_eq!(same.p_value, 1.0);
        assert_eq!(same.df, 7.0);
        // Both constant, different: overwhelming evidence, kept finite.
        let diff = welch_t_test(&[0.3; 5], &[0.2; 4]).unwrap();
        assert_eq!(diff.t, DEGENERATE_T);
        assert_eq!(diff.p_value, DEGENERATE_P);
        let flipped = welch_t_test(&[0.2; 4], &[0.3; 5]).unwrap();
        assert_eq!(flipped.t, -DEGENERATE_T);
        assert_eq!(flipped.p_value, DEGENERATE_P);
    }

    #[test]
    fn welch_one_constant_group_stays_finite() {
        let test = welch_t_test(&[0.5; 4], &[0.1, 0.2, 0.3]).unwrap();
        assert!(test.t.is_finite() && test.t > 0.0);
        // With one zero variance the Welch df collapses to n_b − 1.
        assert!((test.df - 2.0).abs() < 1e-12);
        assert!(test.p_value > 0.0 && test.p_value < 1.0);
    }

    #[test]
    fn welch_rejects_small_or_bad_groups() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0, 2.0], &[]).is_err());
        assert!(welch_t_test(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn partition_covers_every_row_once() {
        let scores = [0.9, 0.5, 0.3, 0.5, 0.1, 0.7];
        let labels = [1, 1, 1, 0, 0, 0];
        let partition = partition_outcomes(&scores, &labels, 0.5).unwrap();
        // Ties at the threshold predict positive.
        assert_eq!(partition.true_positives, vec![0, 1]);
        assert_eq!(partition.false_negatives, vec![2]);
        assert_eq!(partition.false_positives, vec![3, 5]);
        assert_eq!(partition.true_negatives, vec![4]);
        let total = partition.true_positives.len()
            + partition.false_positives.len()
            + partition.true_negatives.len()
            + partition.false_negatives.len();
        assert_eq!(total, scores.len());
    }

    #[test]
    fn partition_rejects_bad_input() {
        assert!(partition_outcomes(&[0.5], &[1, 0], 0.5).is_err());
        assert!(partition_outcomes(&[0.5, 0.2], &[1, 2], 0.5).is_err());
        assert!(partition_outcomes(&[f64::NAN, 0.2], &[1, 0], 0.5).is_err());
        assert!(partition_outcomes(&[0.5, 0.2], &[1, 0], f64::NAN).is_err());
    }

    /// 24 subjects: 6 TP, 6 FN, 6 FP, 6 TN at threshold 0.5, with a
    /// strong planted difference in feature 1, none in feature 2 and a
    /// moderate one in feature 3.
    fn crafted_outcome_cohort() -> (Cohort, Vec<f64>) {
        let mut labels = vec![1u8; 12];
        labels.extend(vec![0u8; 12]);
        let mut scores = Vec::new();
        scores.extend((0..6).map(|i| 0.8 + i as f64 * 0.01)); // TP
        scores.extend((0..6).map(|i| 0.2 + i as f64 * 0.01)); // FN
        scores.extend((0..6).map(|i| 0.7 + i as f64 * 0.01)); // FP
        scores.extend((0..6).map(|i| 0.1 + i as f64 * 0.01)); // TN

        let mut strong = Vec::new();
        strong.extend((0..6).map(|i| 0.10 + i as f64 * 0.005)); // TP low
        strong.extend((0..6).map(|i| 0.80 + i as f64 * 0.005)); // FN high
        strong.extend(vec![0.5; 12]);
        let mut flat = Vec::new();
        flat.extend((0..12).map(|i| 0.4 + (i % 6) as f64 * 0.01)); // same in both
        flat.extend(vec![0.5; 12]);
        let mut moderate = Vec::new();
        moderate.extend((0..6).map(|i| 0.30 + i as f64 * 0.04)); // TP
        moderate.extend((0..6).map(|i| 0.38 + i as f64 * 0.04)); // FN slightly higher
        moderate.extend(vec![0.5; 12]);

        (cohort_with(labels, vec![strong, flat, moderate]), scores)
    }

    #[test]
    fn report_orders_by_significance_and_flags() {
        let (cohort, scores) = crafted_outcome_cohort();
        let report = fn_vs_tp_report(&cohort, &scores, 0.5, 0.05).unwrap();
        assert_eq!(report.n_true_positives, 6);
        assert_eq!(report.n_false_negatives, 6);
        assert_eq!(report.comparisons.len(), 3);

        // The planted separation wins, the flat feature comes last.
        assert_eq!(report.comparisons[0].feature_index, 0);
        assert_eq!(report.comparisons[2].feature_index, 1);
        for pair in report.comparisons.windows(2) {
            assert!(pair[0].p_value <= pair[1].p_value);
        }
        let strongest = &report.comparisons[0];
        assert!(strongest.flagged);
        assert!(strongest.t > 0.0, "missed events have the higher mean");
        assert!((strongest.mean_false_negative - 0.8125).abs() < 1e-12);
        assert!((strongest.mean_true_positive - 0.1125).abs() < 1e-12);
        let flat = &report.comparisons[2];
        assert!(!flat.flagged);
        assert_eq!(flat.p_value, 1.0, "identical groups compare as equal");
        for c in &report.comparisons {
            assert_eq!(c.bonferroni_p, (c.p_value * 3.0).min(1.0));
            assert_eq!(c.flagged, c.p_value < 0.05);
        }
    }

    #[test]
    fn report_advises_on_threshold_starvation() {
        let (cohort, scores) = crafted_outcome_cohort();
        // Threshold 0.05: everything predicts positive, no FN remain.
        let err = fn_vs_tp_report(&cohort, &scores, 0.05, 0.05).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("false negatives"), "{message}");
        assert!(message.contains("threshold"), "{message}");
    }

    #[test]
    fn case_study_picks_highest_scoring_false_positive() {
        let (cohort, scores) = crafted_outcome_cohort();
        let features: Vec<usize> = (0..cohort.n_features()).collect();
        let config = TrainConfig {
            n_trees: 5,
            max_depth: 2,
            ..TrainConfig::default()
        };
        let model = fit(&cohort, &features, &config).unwrap();
        let attributions = explain_cohort(&model, &cohort).unwrap();

        let case = fp_case_study(&cohort, &scores, 0.5, &attributions, 2)
            .unwrap()
            .expect("false positives exist at 0.5");
        // FP scores are 0.70..0.75 at rows 12..18; row 17 is highest.
        assert_eq!(case.row_index, 17);
        assert_eq!(case.sample_id, "s17");
        assert!((case.score - 0.75).abs() < 1e-12);
        assert_eq!(case.waterfall.steps.len(), 2);
        assert_eq!(case.waterfall.sample_id, "s17");

        // A threshold above every score leaves nothing to study.
        let none = fp_case_study(&cohort, &scores, 0.99, &attributions, 2).unwrap();
        assert!(none.is_none());

        // Attributions from a different cohort are refused.
        let other = cohort_with(vec![1, 0, 1, 0], vec![vec![0.1, 0.2, 0.3, 0.4]]);
        assert!(fp_case_study(&other, &scores[..4], 0.5, &attributions, 2).is_err());
    }

    #[test]
    fn prior_cohort_context_is_well_formed() {
        for row in PRIOR_COHORT_COMPARISONS {
            assert!(row.feature_index < 150);
            assert!(row.mean_false_negative > 0.0 && row.mean_false_negative < 1.0);
            assert!(row.mean_true_positive > 0.0 && row.mean_true_positive < 1.0);
        }
    }
}
