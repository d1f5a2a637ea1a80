//! Three-stage feature selection for probability features.
//!
//! 1. **Variance filter** — drop features whose most frequent value
//!    (after quantizing to 6 decimal places) covers more than 90% of
//!    subjects; such columns are effectively constant.
//! 2. **Correlation pruning** — among the survivors, scan feature
//!    pairs in ascending index order and, whenever `|Pearson r|`
//!    exceeds 0.70, drop the member with the lower binned entropy
//!    (ties drop the higher index). Dropped features take no further
//!    part in the scan.
//! 3. **Entropy-ordered forward selection** — rank the survivors by
//!    entropy, highest first, and evaluate nested prefixes of that
//!    ranking with cross-validated AUC; keep the shortest prefix that
//!    reaches the maximum.
//!
//! Entropy uses 10 equal-width bins on `[0, 1]` and is reported in
//! bits. Prefix evaluations are independent, so they run on the rayon
//! pool; results are collected in prefix order and the outcome is
//! worker-count invariant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::gbdt::{fit, TrainConfig};
use crate::metrics::auc_roc;
use crate::tune::{stratified_kfold, DEFAULT_CV_FOLDS};

/// A feature is "near-constant" when one quantized value covers more
/// than this fraction of subjects.
pub const DEFAULT_DOMINANCE_THRESHOLD: f64 = 0.90;

/// Pairs with `|r|` above this are considered redundant.
pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.70;

/// Number of equal-width entropy bins on `[0, 1]`.
const ENTROPY_BINS: usize = 10;

/// Decimal places used when deciding whether two values are "the same"
/// for the variance filter.
const QUANTIZE_DECIMALS: i32 = 6;

/// Outcome of the variance filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceFilterOutcome {
    /// Surviving feature indices, ascending.
    pub kept: Vec<usize>,
    /// Dropped feature indices, ascending.
    pub dropped: Vec<usize>,
}

/// One pruning decision: `dropped` was removed because of its
/// correlation with `kept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedDrop {
    pub kept: usize,
    pub dropped: usize,
    /// Signed Pearson correlation between the two columns.
    pub r: f64,
}

/// Outcome of correlation pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    /// Surviving feature indices, ascending.
    pub kept: Vec<usize>,
    /// Pruning decisions in the order they were made.
    pub dropped: Vec<CorrelatedDrop>,
}

/// Full record of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub dominance_threshold: f64,
    pub correlation_threshold: f64,
    /// Features removed by the variance filter, ascending.
    pub dropped_low_variance: Vec<usize>,
    /// Correlation-pruning decisions in scan order.
    pub dropped_correlated: Vec<CorrelatedDrop>,
    /// Survivors ranked by entropy, highest first (ties by index).
    pub ranked_candidates: Vec<usize>,
    /// Mean CV AUC of each prefix of `ranked_candidates`;
    /// `auc_series[i]` scores the first `i + 1` candidates.
    pub auc_series: Vec<f64>,
    /// The winning prefix of `ranked_candidates`, in ranking order.
    pub selected: Vec<usize>,
    /// AUC of the winning prefix; equals the maximum of `auc_series`.
    pub best_auc: f64,
}

/// Parameters for [`selection_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub dominance_threshold: f64,
    pub correlation_threshold: f64,
    pub cv_folds: usize,
    pub seed: u64,
    /// Configuration of the models fitted during forward selection.
    pub train_config: TrainConfig,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            dominance_threshold: DEFAULT_DOMINANCE_THRESHOLD,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
            cv_folds: DEFAULT_CV_FOLDS,
            seed: 0,
            train_config: TrainConfig::default(),
        }
    }
}

fn quantize(v: f64) -> i64 {
    (v * 10f64.powi(QUANTIZE_DECIMALS)).round() as i64
}

/// Drop features whose dominant quantized value covers more than
/// `dominance_threshold` of subjects.
pub fn variance_filter(
    cohort: &Cohort,
    dominance_threshold: f64,
) -> Result<VarianceFilterOutcome> {
    if !(dominance_threshold > 0.0 && dominance_threshold <= 1.0) {
        return Err(Error::Selection(format!(
            "dominance threshold {dominance_threshold} must be in (0, 1]"
        )));
    }
    let n = cohort.n_subjects();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut quantized = Vec::with_capacity(n);
    for j in 0..cohort.n_features() {
        quantized.clear();
        quantized.extend((0..n).map(|i| quantize(cohort.value(i, j))));
        quantized.sort_unstable();
        let mut dominant = 0usize;
        let mut run = 0usize;
        let mut prev = i64::MIN;
        for &q in &quantized {
            if q == prev {
                run += 1;
            } else {
                run = 1;
                prev = q;
            }
            dominant = dominant.max(run);
        }
        if dominant as f64 / n as f64 > dominance_threshold {
            dropped.push(j);
        } else {
            kept.push(j);
        }
    }
    Ok(VarianceFilterOutcome { kept, dropped })
}

/// Pearson correlation coefficient. Inputs must be equal-length,
/// non-empty and finite. Returns NaN when either input has zero
/// variance — correlation is undefined there, and callers treat such
/// pairs as unrelated.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Selection(format!(
            "pearson inputs have different lengths ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Selection("pearson on empty input".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Selection("pearson on non-finite input".into()));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// Shannon entropy (bits) of a probability feature over 10 equal-width
/// bins on `[0, 1]`; 1.0 falls in the top bin.
pub fn feature_entropy(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Selection("entropy of empty input".into()));
    }
    let mut counts = [0usize; ENTROPY_BINS];
    for &v in values {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Selection(format!(
                "entropy input {v} outside [0, 1]"
            )));
        }
        let bin = ((v * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1);
        counts[bin] += 1;
    }
    let n = values.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    Ok(h)
}

/// Greedy redundancy removal: scan candidate pairs `(i, j)` with
/// `i < j` in ascending index order; when both are still alive and
/// `|r|` exceeds the threshold, drop the lower-entropy member (ties
/// drop the higher index). Pairs whose correlation is undefined
/// (constant columns) are skipped.
pub fn correlation_prune(
    cohort: &Cohort,
    candidates: &[usize],
    correlation_threshold: f64,
) -> Result<PruneOutcome> {
    if !(correlation_threshold > 0.0 && correlation_threshold < 1.0) {
        return Err(Error::Selection(format!(
            "correlation threshold {correlation_threshold} must be in (0, 1)"
        )));
    }
    for &j in candidates {
        if j >= cohort.n_features() {
            return Err(Error::Selection(format!(
                "candidate feature {j} out of range for {} features",
                cohort.n_features()
            )));
        }
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let columns: Vec<Vec<f64>> = sorted.iter().map(|&j| cohort.column(j)).collect();
    let entropies: Vec<f64> = columns
        .iter()
        .map(|c| feature_entropy(c))
        .collect::<Result<_>>()?;

    let mut alive = vec![true; sorted.len()];
    let mut dropped = Vec::new();
    for a in 0..sorted.len() {
        if !alive[a] {
            continue;
        }
        for b in (a + 1)..sorted.len() {
            if !alive[b] {
                continue;
            }
            let r = pearson(&columns[a], &columns[b])?;
            if !r.is_finite() || r.abs() <= correlation_threshold {
                continue;
            }
            // Drop the less informative member.
            let drop_b = entropies[b] < entropies[a]
                || (entropies[b] == entropies[a] && sorted[b] > sorted[a]);
            if drop_b {
                alive[b] = false;
                dropped.push(CorrelatedDrop {
                    kept: sorted[a],
                    dropped: sorted[b],
                    r,
                });
            } else {
                alive[a] = false;
                dropped.push(CorrelatedDrop {
                    kept: sorted[b],
                    dropped: sorted[a],
                    r,
                });
                break;
            }
        }
    }
    let kept = sorted
        .iter()
        .zip(&alive)
        .filter_map(|(&j, &a)| a.then_some(j))
        .collect();
    Ok(PruneOutcome { kept, dropped })
}

/// Candidates ranked by binned entropy, highest first; ties by
/// ascending feature index.
pub fn entropy_ranking(cohort: &Cohort, candidates: &[usize]) -> Result<Vec<usize>> {
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&j| Ok((j, feature_entropy(&cohort.column(j))?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("entropies are finite")
            .then(a.0.cmp(&b.0))
    });
    Ok(scored.into_iter().map(|(j, _)| j).collect())
}

/// Outcome of forward selection over a fixed candidate ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutcome {
    /// `auc_series[i]` is the score of `ranked[..=i]`.
    pub auc_series: Vec<f64>,
    /// Length of the winning prefix.
    pub selected_len: usize,
    /// Score of the winning prefix; the maximum of `auc_series`.
    pub best_auc: f64,
}

/// Evaluate every prefix of `ranked` with `evaluate` and pick the
/// shortest prefix achieving the maximum score. Prefix evaluations run
/// in parallel; the scan that picks the winner is sequential, so the
/// result is worker-count invariant.
pub fn forward_select<E>(cohort: &Cohort, ranked: &[usize], evaluate: E) -> Result<ForwardOutcome>
where
    E: Fn(&Cohort, &[usize]) -> Result<f64> + Sync,
{
    if ranked.is_empty() {
        return Err(Error::Selection(
            "forward selection needs at least one candidate".into(),
        ));
    }
    let outcomes: Vec<Result<f64>> = (1..=ranked.len())
        .into_par_iter()
        .map(|len| {
            let auc = evaluate(cohort, &ranked[..len])?;
            if !auc.is_finite() {
                return Err(Error::Selection(format!(
                    "evaluator returned non-finite score for prefix length {len}"
                )));
            }
            Ok(auc)
        })
        .collect();
    let mut auc_series = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        auc_series.push(outcome?);
    }
    let mut selected_len = 1;
    let mut best_auc = auc_series[0];
    for (i, &auc) in auc_series.iter().enumerate().skip(1) {
        if auc > best_auc {
            best_auc = auc;
            selected_len = i + 1;
        }
    }
    Ok(ForwardOutcome {
        auc_series,
        selected_len,
        best_auc,
    })
}

/// Run all three stages with the default evaluator: mean AUC over
/// stratified CV folds of a boosted model fitted on the prefix.
pub fn selection_pipeline(cohort: &Cohort, params: &SelectionParams) -> Result<SelectionReport> {
    let variance = variance_filter(cohort, params.dominance_threshold)?;
    if variance.kept.is_empty() {
        return Err(Error::Selection(
            "no features survived the variance filter".into(),
        ));
    }
    let prune = correlation_prune(cohort, &variance.kept, params.correlation_threshold)?;
    if prune.kept.is_empty() {
        return Err(Error::Selection(
            "no features survived correlation pruning".into(),
        ));
    }
    let ranked = entropy_ranking(cohort, &prune.kept)?;

    let folds = stratified_kfold(cohort, params.cv_folds, params.seed)?;
    let mut fold_pairs: Vec<(Cohort, Cohort)> = Vec::with_capacity(folds.len());
    for val_rows in &folds {
        let mut in_val = vec![false; cohort.n_subjects()];
        for &r in val_rows {
            in_val[r] = true;
        }
        let train_rows: Vec<usize> =
            (0..cohort.n_subjects()).filter(|&r| !in_val[r]).collect();
        fold_pairs.push((cohort.subset_rows(&train_rows)?, cohort.subset_rows(val_rows)?));
    }
    let evaluate = |_: &Cohort, subset: &[usize]| -> Result<f64> {
        let mut sum = 0.0;
        for (fold_train, fold_val) in &fold_pairs {
            let model = fit(fold_train, subset, &params.train_config)?;
            let probs = model.predict_probs(fold_val)?;
            sum += auc_roc(&probs, fold_val.labels())?;
        }
        Ok(sum / fold_pairs.len() as f64)
    };
    let forward = forward_select(cohort, &ranked, evaluate)?;

    Ok(SelectionReport {
        dominance_threshold: params.dominance_threshold,
        correlation_threshold: params.correlation_threshold,
        dropped_low_variance: variance.dropped,
        dropped_correlated: prune.dropped,
        selected: ranked[..forward.selected_len].to_vec(),
        ranked_candidates: ranked,
        auc_series: forward.auc_series,
        best_auc: forward.best_auc,
    })
}
