//! Discrimination and threshold metrics for binary risk scores.
//!
//! Curves are *tie-grouped*: all samples sharing a score move together,
//! so a curve has one point per distinct score value. This makes the
//! trapezoidal area under the ROC curve equal the Mann–Whitney
//! statistic (ties counted half) up to floating-point rounding, and it
//! makes average precision an exact step integral over distinct
//! thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of the four confusion cells at a fixed threshold.
/// Classification rule: predicted positive iff `score >= threshold`
/// (ties go to the positive side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
    pub threshold: f64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_positives + self.true_negatives) as f64 / self.total() as f64
    }

    /// TP / (TP + FP); defined as 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        let denom = self.true_positives + self.false_positives;
        if denom == 0 {
            0.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    /// TP / (TP + FN); defined as 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        let denom = self.true_positives + self.false_negatives;
        if denom == 0 {
            0.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

/// Harmonic mean of a precision/recall pair; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Full evaluation of a score vector against labels at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    /// (false positive rate, true positive rate), starting at (0, 0)
    /// and ending at (1, 1).
    pub roc_points: Vec<(f64, f64)>,
    /// (recall, precision), starting at the conventional (0, 1) anchor.
    pub pr_points: Vec<(f64, f64)>,
}

/// Counts implied by a reported (precision, recall) pair, for checking
/// a stated confusion matrix against separately reported metrics.
/// Implied counts are rounded half-up from the exact real values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportCrossCheck {
    pub implied_true_positives: u64,
    pub implied_false_positives: u64,
    pub implied_false_negatives: u64,
    /// True when every implied count matches the stated matrix.
    pub consistent: bool,
}

fn validate_scores(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Metrics("empty input".into()));
    }
    if let Some(idx) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Metrics(format!(
            "non-finite score at index {idx}"
        )));
    }
    if let Some(idx) = labels.iter().position(|&y| y > 1) {
        return Err(Error::Metrics(format!(
            "label {} at index {idx} not in {{0, 1}}",
            labels[idx]
        )));
    }
    let pos: u64 = labels.iter().map(|&y| y as u64).sum();
    let neg = labels.len() as u64 - pos;
    Ok((neg, pos))
}

fn require_both_classes(neg: u64, pos: u64) -> Result<()> {
    if neg == 0 || pos == 0 {
        return Err(Error::Metrics(format!(
            "both classes required, got {neg} negatives / {pos} positives"
        )));
    }
    Ok(())
}

/// Indices sorted by score descending. Ties keep ascending index order,
/// which downstream grouping makes irrelevant but keeps the sort
/// deterministic.
fn order_by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores validated finite")
            .then(a.cmp(&b))
    });
    order
}

/// Walk the scores from high to low in tie groups, yielding cumulative
/// (tp, fp) after each group.
fn tie_grouped_counts(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let order = order_by_score_desc(scores);
    let mut out = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Tie-grouped ROC curve: (FPR, TPR) points from (0, 0) to (1, 1),
/// one interior point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (neg, pos) = validate_scores(scores, labels)?;
    require_both_classes(neg, pos)?;
    let mut points = vec![(0.0, 0.0)];
    for (tp, fp) in tie_grouped_counts(scores, labels) {
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Area under the tie-grouped ROC curve (trapezoidal rule). Equals the
/// Mann–Whitney statistic with ties counted one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let points = roc_curve(scores, labels)?;
    let mut area = 0.0;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        area += (x1 - x0) * (y0 + y1) * 0.5;
    }
    Ok(area)
}

/// Tie-grouped precision–recall curve: (recall, precision) points,
/// anchored at the conventional (0, 1).
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (neg, pos) = validate_scores(scores, labels)?;
    require_both_classes(neg, pos)?;
    let mut points = vec![(0.0, 1.0)];
    for (tp, fp) in tie_grouped_counts(scores, labels) {
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(points)
}

/// Average precision: the step integral `Σ (Rₖ − Rₖ₋₁) · Pₖ` over
/// distinct score thresholds, highest first. This is exactly the area
/// under the step-interpolated PR curve; no trapezoids are involved.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (neg, pos) = validate_scores(scores, labels)?;
    require_both_classes(neg, pos)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in tie_grouped_counts(scores, labels) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Confusion counts at a threshold: predicted positive iff
/// `score >= threshold`.
pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix {
        true_positives: 0,
        false_positives: 0,
        true_negatives: 0,
        false_negatives: 0,
        threshold,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.true_positives += 1,
            (true, false) => cm.false_positives += 1,
            (false, false) => cm.true_negatives += 1,
            (false, true) => cm.false_negatives += 1,
        }
    }
    cm
}

/// Assemble the full evaluation report at one threshold (default
/// convention in this crate: 0.5).
pub fn summarize(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    if !threshold.is_finite() {
        return Err(Error::Metrics(format!("non-finite threshold {threshold}")));
    }
    let confusion = confusion_at(scores, labels, threshold);
    Ok(EvalReport {
        auc_roc: auc_roc(scores, labels)?,
        auc_pr: average_precision(scores, labels)?,
        accuracy: confusion.accuracy(),
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        confusion,
        roc_points: roc_curve(scores, labels)?,
        pr_points: pr_curve(scores, labels)?,
    })
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

/// Check a stated confusion matrix against separately reported
/// precision and recall values.
///
/// Published reports sometimes quote a confusion matrix and a
/// (precision, recall) pair that do not describe the same classifier
/// output — e.g. a recall that implies one fewer true positive than
/// the matrix shows. This derives the counts the reported metrics
/// imply (rounded half-up) and compares them cell by cell.
pub fn cross_check_reported(
    stated: &ConfusionMatrix,
    reported_precision: f64,
    reported_recall: f64,
) -> Result<ReportCrossCheck> {
    if !(0.0..=1.0).contains(&reported_precision) || !(0.0..=1.0).contains(&reported_recall) {
        return Err(Error::Metrics(format!(
            "reported precision {reported_precision} / recall {reported_recall} outside [0, 1]"
        )));
    }
    if reported_precision == 0.0 {
        return Err(Error::Metrics(
            "cannot derive counts from zero precision".into(),
        ));
    }
    let positives = stated.true_positives + stated.false_negatives;
    let implied_tp = round_half_up(reported_recall * positives as f64);
    let implied_fp =
        round_half_up(implied_tp as f64 * (1.0 - reported_precision) / reported_precision);
    let implied_fn = positives - implied_tp.min(positives);
    Ok(ReportCrossCheck {
        implied_true_positives: implied_tp,
        implied_false_positives: implied_fp,
        implied_false_negatives: implied_fn,
        consistent: implied_tp == stated.true_positives
            && implied_fp == stated.false_positives
            && implied_fn == stated.false_negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic-time reference: pairs won + half the ties.
    fn mann_whitney_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0u64;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
        num / pairs as f64
    }

    /// Average precision by explicit threshold enumeration: evaluate
    /// precision and recall by direct counting at every distinct score
    /// and accumulate the step integral.
    fn ap_by_threshold_enumeration(scores: &[f64], labels: &[u8]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for t in thresholds {
            let cm = confusion_at(scores, labels, t);
            ap += (cm.recall() - prev_recall) * cm.precision();
            prev_recall = cm.recall();
        }
        ap
    }

    #[test]
    fn auc_on_hand_checked_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0, 0, 1, 1];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn ap_on_hand_checked_example() {
        // Thresholds high→low: R 0.5 P 1, R 0.5 P 0.5, R 1 P 2/3, R 1 P 0.5.
        // AP = 0.5·1 + 0.5·(2/3) = 5/6.
        let scores = [0.9, 0.8, 0.7, 0.6];
        let labels = [1, 0, 1, 0];
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15, "{ap}");
    }

    #[test]
    fn perfect_and_reversed_rankings() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(average_precision(&scores, &labels).unwrap(), 1.0);
        let reversed = [0, 0, 1, 1];
        assert_eq!(auc_roc(&scores, &reversed).unwrap(), 0.0);
    }

    #[test]
    fn constant_scores_give_half_auc_and_prevalence_ap() {
        let scores = [0.3; 10];
        let labels = [1, 0, 0, 0, 1, 0, 0, 0, 0, 1];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 0.5);
        assert_eq!(average_precision(&scores, &labels).unwrap(), 0.3);
        let roc = roc_curve(&scores, &labels).unwrap();
        assert_eq!(roc, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn curves_have_expected_endpoints() {
        let scores = [0.1, 0.7, 0.7, 0.3, 0.9];
        let labels = [0, 1, 0, 1, 1];
        let roc = roc_curve(&scores, &labels).unwrap();
        assert_eq!(*roc.first().unwrap(), (0.0, 0.0));
        assert_eq!(*roc.last().unwrap(), (1.0, 1.0));
        // 4 distinct scores -> 4 interior points plus the origin.
        assert_eq!(roc.len(), 5);
        let pr = pr_curve(&scores, &labels).unwrap();
        assert_eq!(*pr.first().unwrap(), (0.0, 1.0));
        assert_eq!(pr.last().unwrap().0, 1.0);
    }

    #[test]
    fn auc_matches_mann_whitney_with_heavy_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n = rng.gen_range(5..40);
            // Coarse grid of score values forces many exact ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let fast = auc_roc(&scores, &labels).unwrap();
            let slow = mann_whitney_auc(&scores, &labels);
            assert!(
                (fast - slow).abs() < 1e-12,
                "trial {trial}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn ap_matches_threshold_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n = rng.gen_range(4..30);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let fast = average_precision(&scores, &labels).unwrap();
            let slow = ap_by_threshold_enumeration(&scores, &labels);
            assert!(
                (fast - slow).abs() < 1e-12,
                "trial {trial}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn confusion_ties_go_positive() {
        let scores = [0.5, 0.5, 0.4, 0.6];
        let labels = [1, 0, 1, 0];
        let cm = confusion_at(&scores, &labels, 0.5);
        assert_eq!(cm.true_positives, 1);
        assert_eq!(cm.false_positives, 2); // 0.5 and 0.6 negatives
        assert_eq!(cm.false_negatives, 1); // the 0.4 positive
        assert_eq!(cm.true_negatives, 0);
    }

    #[test]
    fn summarize_is_internally_consistent() {
        let scores = [0.9, 0.1, 0.6, 0.4, 0.52, 0.7];
        let labels = [1, 0, 1, 0, 0, 0];
        let report = summarize(&scores, &labels, 0.5).unwrap();
        assert_eq!(report.confusion.total(), 6);
        assert_eq!(report.accuracy, report.confusion.accuracy());
        let f1 = f1_score(report.precision, report.recall);
        assert_eq!(report.f1, f1);
        assert_eq!(*report.roc_points.first().unwrap(), (0.0, 0.0));
        assert_eq!(*report.roc_points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn metrics_reject_bad_input() {
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &[1, 1]),
            Err(Error::Metrics(_))
        ));
        assert!(matches!(
            auc_roc(&[0.1, f64::NAN], &[1, 0]),
            Err(Error::Metrics(_))
        ));
        assert!(matches!(
            auc_roc(&[0.1], &[1, 0]),
            Err(Error::Metrics(_))
        ));
        assert!(matches!(auc_roc(&[], &[]), Err(Error::Metrics(_))));
        assert!(matches!(
            summarize(&[0.1, 0.9], &[0, 1], f64::NAN),
            Err(Error::Metrics(_))
        ));
    }

    #[test]
    fn cross_check_flags_inconsistent_reports() {
        // A stated matrix whose recall column disagrees with the
        // reported recall by one true positive.
        let stated = ConfusionMatrix {
            true_positives: 10,
            false_positives: 2,
            true_negatives: 1_290,
            false_negatives: 25,
            threshold: 0.5,
        };
        let check = cross_check_reported(&stated, 0.818, 0.257).unwrap();
        assert_eq!(check.implied_true_positives, 9);
        assert_eq!(check.implied_false_positives, 2);
        assert_eq!(check.implied_false_negatives, 26);
        assert!(!check.consistent);

        // The same matrix against its own exact metrics is consistent.
        let check2 =
            cross_check_reported(&stated, stated.precision(), stated.recall()).unwrap();
        assert!(check2.consistent);
    }

    proptest! {
        #[test]
        fn prop_auc_equals_mann_whitney(
            scores in proptest::collection::vec(0.0f64..=1.0, 4..60),
            flips in proptest::collection::vec(0u8..2, 4..60),
        ) {
            let n = scores.len().min(flips.len());
            let scores = &scores[..n];
            let mut labels = flips[..n].to_vec();
            labels[0] = 0;
            labels[1] = 1;
            let fast = auc_roc(scores, &labels).unwrap();
            let slow = mann_whitney_auc(scores, &labels);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        #[test]
        fn prop_confusion_counts_partition_input(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..50),
            threshold in 0.0f64..=1.0,
        ) {
            let labels: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.6)).collect();
            let cm = confusion_at(&scores, &labels, threshold);
            prop_assert_eq!(cm.total() as usize, scores.len());
        }
    }
}
