//! Exact per-feature attribution of boosted-tree predictions.
//!
//! Every margin prediction is decomposed additively,
//!
//! ```text
//! margin(x) = base_value + Σ_j phi[j]
//! ```
//!
//! where `phi[j]` is the Shapley value of feature `j` in the
//! cooperative game whose payoff for a feature subset `S` is the
//! expected ensemble output when features in `S` follow `x` and every
//! split on a feature outside `S` averages its children weighted by
//! their training covers. `base_value` is the payoff of the empty
//! subset: the initial margin plus each tree's cover-weighted mean
//! leaf weight.
//!
//! Shapley values are computed exactly with the polynomial-time path
//! algorithm — `O(leaves · depth²)` per tree and sample — by carrying
//! a path of `(zero_fraction, one_fraction, pweight)` elements down
//! the tree, extending it at each split and unwinding it when a
//! feature repeats along a path. No sampling is involved, so
//! attributions are deterministic. [`brute_force_shapley`] evaluates
//! the same game by direct subset enumeration and serves as an
//! independent oracle for small models.
//!
//! All attributions are on the margin (log-odds) scale, where the
//! model is genuinely additive. Samples are explained independently
//! on the rayon pool and collected in cohort order, so output never
//! depends on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::gbdt::{BoostedModel, Tree, TreeNode};

/// Path marker for the root element, which no feature owns.
const NO_FEATURE: usize = usize::MAX;

/// [`brute_force_shapley`] enumerates `2^m` subsets of the `m`
/// features referenced by the ensemble; beyond this it refuses.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 20;

/// Default number of features shown by summary and waterfall views.
pub const DEFAULT_TOP_K: usize = 20;

/// Shapley attributions for a whole cohort, on the margin scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSet {
    /// Expected margin of the model: the payoff of the empty subset.
    pub base_value: f64,
    pub sample_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// `phi[i][j]` is the attribution of feature `j` for sample `i`;
    /// each row sums to `margin(i) − base_value`.
    pub phi: Vec<Vec<f64>>,
}

/// One feature's rank in a global-importance ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature_index: usize,
    pub feature_name: String,
    /// Mean `|phi|` over all explained samples.
    pub mean_abs_phi: f64,
}

/// Per-sample data for one feature of a summary (beeswarm) view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub phi: f64,
    /// Feature value min–max normalized over the cohort, 0.5 when the
    /// feature is constant.
    pub normalized_value: f64,
}

/// One feature of a summary view: importance plus all sample points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFeature {
    pub feature_index: usize,
    pub feature_name: String,
    pub mean_abs_phi: f64,
    pub points: Vec<SummaryPoint>,
}

/// One point of a dependence view: raw feature value against the
/// feature's attribution for the same sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub value: f64,
    pub phi: f64,
}

/// One displayed contribution of a waterfall view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    pub feature_index: usize,
    pub feature_name: String,
    pub phi: f64,
    /// Running margin after applying this step, starting from the base
    /// value.
    pub cumulative: f64,
}

/// Per-sample decomposition from base value to final margin: the
/// largest contributions individually, everything else pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub sample_id: String,
    pub base_value: f64,
    /// Steps ordered by `|phi|`, largest first (ties by feature index).
    pub steps: Vec<WaterfallStep>,
    /// Combined contribution of all features beyond the listed steps.
    pub other: f64,
    /// `base_value` plus every contribution; the sample's margin.
    pub final_margin: f64,
}

/// One element of the feature path carried down a tree.
#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: usize,
    /// Fraction of cover-weighted paths that stay on this route when
    /// the feature is absent from the subset.
    zero_fraction: f64,
    /// 1 when `x` follows this route, else 0.
    one_fraction: f64,
    /// Permutation weight accumulated for the subsets this element
    /// participates in.
    pweight: f64,
}

/// Append a split to the path and redistribute permutation weights.
fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: usize) {
    let l = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if l == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..l).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / (l + 1) as f64;
        path[i].pweight = zero_fraction * path[i].pweight * (l - i) as f64 / (l + 1) as f64;
    }
}

/// Remove element `i` from the path, exactly inverting [`extend`].
fn unwind(path: &mut Vec<PathElement>, i: usize) {
    let len = path.len();
    let one = path[i].one_fraction;
    let zero = path[i].zero_fraction;
    let mut n = path[len - 1].pweight;
    for j in (0..len - 1).rev() {
        if one != 0.0 {
            let t = path[j].pweight;
            path[j].pweight = n * len as f64 / ((j + 1) as f64 * one);
            n = t - path[j].pweight * zero * (len - 1 - j) as f64 / len as f64;
        } else {
            path[j].pweight = path[j].pweight * len as f64 / (zero * (len - 1 - j) as f64);
        }
    }
    for j in i..len - 1 {
        path[j].feature = path[j + 1].feature;
        path[j].zero_fraction = path[j + 1].zero_fraction;
        path[j].one_fraction = path[j + 1].one_fraction;
    }
    path.pop();
}

/// Total pweight the path would have after unwinding element `i`,
/// without modifying it.
fn unwound_sum(path: &[PathElement], i: usize) -> f64 {
    let len = path.len();
    let one = path[i].one_fraction;
    let zero = path[i].zero_fraction;
    let mut total = 0.0;
    if one != 0.0 {
        let mut n = path[len - 1].pweight;
        for j in (0..len - 1).rev() {
            let t = n / ((j + 1) as f64 * one);
            total += t;
            n = path[j].pweight - t * zero * (len - 1 - j) as f64;
        }
    } else {
        for j in (0..len - 1).rev() {
            total += path[j].pweight / (zero * (len - 1 - j) as f64);
        }
    }
    total * len as f64
}

/// Cover-weighted routing fractions of a split's children. Children
/// must carry positive total cover, otherwise the averaging game is
/// undefined.
fn child_fractions(tree: &Tree, node: usize, left: usize, right: usize) -> Result<(f64, f64)> {
    let left_cover = tree.nodes[left].cover();
    let right_cover = tree.nodes[right].cover();
    let total = left_cover + right_cover;
    if !total.is_finite() || total <= 0.0 || left_cover < 0.0 || right_cover < 0.0 {
        return Err(Error::Explain(format!(
            "split node {node} has children with non-positive total cover \
             ({left_cover} + {right_cover}); cannot route averages"
        )));
    }
    Ok((left_cover / total, right_cover / total))
}

fn recurse(
    tree: &Tree,
    node: usize,
    x: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: usize,
) -> Result<()> {
    extend(&mut path, zero_fraction, one_fraction, feature);
    match tree.nodes[node] {
        TreeNode::Leaf { weight, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                phi[path[i].feature] +=
                    w * (path[i].one_fraction - path[i].zero_fraction) * weight;
            }
        }
        TreeNode::Split {
            feature: f,
            threshold,
            left,
            right,
            ..
        } => {
            if f >= x.len() {
                return Err(Error::Explain(format!(
                    "split node {node} references feature {f}, input has {}",
                    x.len()
                )));
            }
            let (left_fraction, right_fraction) = child_fractions(tree, node, left, right)?;
            let (hot, cold, hot_fraction, cold_fraction) = if x[f] < threshold {
                (left, right, left_fraction, right_fraction)
            } else {
                (right, left, right_fraction, left_fraction)
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = path.iter().position(|e| e.feature == f) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            recurse(
                tree,
                hot,
                x,
                phi,
                path.clone(),
                incoming_zero * hot_fraction,
                incoming_one,
                f,
            )?;
            recurse(
                tree,
                cold,
                x,
                phi,
                path,
                incoming_zero * cold_fraction,
                0.0,
                f,
            )?;
        }
    }
    Ok(())
}

/// Add one tree's exact Shapley attributions for `x` into `phi`.
pub fn tree_shap(tree: &Tree, x: &[f64], phi: &mut [f64]) -> Result<()> {
    if x.len() != phi.len() {
        return Err(Error::Explain(format!(
            "input has {} features but the output buffer has {}",
            x.len(),
            phi.len()
        )));
    }
    recurse(tree, 0, x, phi, Vec::new(), 1.0, 1.0, NO_FEATURE)
}

fn tree_mean(tree: &Tree, node: usize) -> Result<f64> {
    match tree.nodes[node] {
        TreeNode::Leaf { weight, .. } => Ok(weight),
        TreeNode::Split { left, right, .. } => {
            let (left_fraction, right_fraction) = child_fractions(tree, node, left, right)?;
            Ok(left_fraction * tree_mean(tree, left)?
                + right_fraction * tree_mean(tree, right)?)
        }
    }
}

/// The expected margin of the model under cover-weighted averaging:
/// the initial margin plus each tree's cover-weighted mean leaf
/// weight. Attributions always decompose predictions relative to this
/// value.
pub fn expected_margin(model: &BoostedModel) -> Result<f64> {
    let mut value = model.base_margin();
    for tree in &model.trees {
        value += tree_mean(tree, 0)?;
    }
    Ok(value)
}

fn check_sample(model: &BoostedModel, x: &[f64]) -> Result<()> {
    if x.len() != model.n_features() {
        return Err(Error::Explain(format!(
            "input has {} features, model expects {}",
            x.len(),
            model.n_features()
        )));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Explain(format!(
            "non-finite value in feature '{}'",
            model.feature_names[j]
        )));
    }
    Ok(())
}

/// Exact attributions for one feature row, in feature order.
pub fn explain_sample(model: &BoostedModel, x: &[f64]) -> Result<Vec<f64>> {
    check_sample(model, x)?;
    let mut phi = vec![0.0; model.n_features()];
    for tree in &model.trees {
        tree_shap(tree, x, &mut phi)?;
    }
    Ok(phi)
}

/// Explain every row of a cohort. The cohort's columns must match the
/// model's feature names exactly; explaining differently laid-out data
/// would silently attribute to the wrong features.
pub fn explain_cohort(model: &BoostedModel, cohort: &Cohort) -> Result<AttributionSet> {
    model.validate()?;
    if cohort.feature_names() != model.feature_names.as_slice() {
        return Err(Error::Explain(format!(
            "cohort columns do not match the model's features \
             (cohort has {}, model expects {})",
            cohort.n_features(),
            model.n_features()
        )));
    }
    let base_value = expected_margin(model)?;
    let rows: Vec<Result<Vec<f64>>> = (0..cohort.n_subjects())
        .into_par_iter()
        .map(|i| explain_sample(model, cohort.row(i)))
        .collect();
    let mut phi = Vec::with_capacity(rows.len());
    for row in rows {
        phi.push(row?);
    }
    Ok(AttributionSet {
        base_value,
        sample_ids: cohort.subject_ids().to_vec(),
        feature_names: model.feature_names.clone(),
        phi,
    })
}

impl AttributionSet {
    pub fn n_samples(&self) -> usize {
        self.phi.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_cohort(&self, cohort: &Cohort) -> Result<()> {
        if cohort.subject_ids() != self.sample_ids.as_slice()
            || cohort.feature_names() != self.feature_names.as_slice()
        {
            return Err(Error::Explain(
                "cohort does not match the one these attributions were computed on".into(),
            ));
        }
        Ok(())
    }

    /// Features ranked by mean `|phi|`, largest first; ties break
    /// toward the lower feature index.
    pub fn global_importance(&self) -> Vec<FeatureImportance> {
        let n = self.n_samples().max(1) as f64;
        let mut ranking: Vec<FeatureImportance> = (0..self.n_features())
            .map(|j| FeatureImportance {
                feature_index: j,
                feature_name: self.feature_names[j].clone(),
                mean_abs_phi: self.phi.iter().map(|row| row[j].abs()).sum::<f64>() / n,
            })
            .collect();
        ranking.sort_by(|a, b| {
            b.mean_abs_phi
                .partial_cmp(&a.mean_abs_phi)
                .expect("attributions are finite")
                .then(a.feature_index.cmp(&b.feature_index))
        });
        ranking
    }

    /// Data for a summary (beeswarm) view: the `top_k` most important
    /// features with every sample's attribution and min–max-normalized
    /// feature value.
    pub fn summary_data(&self, cohort: &Cohort, top_k: usize) -> Result<Vec<SummaryFeature>> {
        self.check_cohort(cohort)?;
        let mut features = Vec::new();
        for imp in self.global_importance().into_iter().take(top_k) {
            let j = imp.feature_index;
            let column = cohort.column(j);
            let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = max - min;
            let points = column
                .iter()
                .zip(&self.phi)
                .map(|(&v, row)| SummaryPoint {
                    phi: row[j],
                    normalized_value: if span > 0.0 { (v - min) / span } else { 0.5 },
                })
                .collect();
            features.push(SummaryFeature {
                feature_index: j,
                feature_name: imp.feature_name,
                mean_abs_phi: imp.mean_abs_phi,
                points,
            });
        }
        Ok(features)
    }

    /// Raw value vs. attribution of one feature across all samples.
    pub fn dependence_data(&self, cohort: &Cohort, feature: usize) -> Result<Vec<DependencePoint>> {
        self.check_cohort(cohort)?;
        if feature >= self.n_features() {
            return Err(Error::Explain(format!(
                "feature {feature} out of range for {} features",
                self.n_features()
            )));
        }
        Ok(cohort
            .column(feature)
            .iter()
            .zip(&self.phi)
            .map(|(&value, row)| DependencePoint {
                value,
                phi: row[feature],
            })
            .collect())
    }

    /// Decompose one sample's margin into its `top_k` largest steps
    /// plus a pooled remainder.
    pub fn waterfall(&self, sample: usize, top_k: usize) -> Result<Waterfall> {
        if sample >= self.n_samples() {
            return Err(Error::Explain(format!(
                "sample {sample} out of range for {} explained samples",
                self.n_samples()
            )));
        }
        let row = &self.phi[sample];
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .abs()
                .partial_cmp(&row[a].abs())
                .expect("attributions are finite")
                .then(a.cmp(&b))
        });
        let shown = top_k.min(order.len());
        let mut cumulative = self.base_value;
        let mut steps = Vec::with_capacity(shown);
        for &j in &order[..shown] {
            cumulative += row[j];
            steps.push(WaterfallStep {
                feature_index: j,
                feature_name: self.feature_names[j].clone(),
                phi: row[j],
                cumulative,
            });
        }
        let other: f64 = order[shown..].iter().map(|&j| row[j]).sum();
        Ok(Waterfall {
            sample_id: self.sample_ids[sample].clone(),
            base_value: self.base_value,
            steps,
            other,
            final_margin: cumulative + other,
        })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Tree output when features in the subset follow `x` and every other
/// split averages its children by cover.
fn eval_subset(tree: &Tree, node: usize, x: &[f64], in_subset: &[bool]) -> Result<f64> {
    match tree.nodes[node] {
        TreeNode::Leaf { weight, .. } => Ok(weight),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            if in_subset[feature] {
                let next = if x[feature] < threshold { left } else { right };
                eval_subset(tree, next, x, in_subset)
            } else {
                let (lf, rf) = child_fractions(tree, node, left, right)?;
                Ok(lf * eval_subset(tree, left, x, in_subset)?
                    + rf * eval_subset(tree, right, x, in_subset)?)
            }
        }
    }
}

/// Shapley values of the same game as [`explain_sample`], computed by
/// direct enumeration of every subset of the features the ensemble
/// actually splits on. Exponential in that count, so models using more
/// than [`BRUTE_FORCE_MAX_FEATURES`] features are refused. Intended as
/// an independent oracle for validating the path algorithm.
pub fn brute_force_shapley(model: &BoostedModel, x: &[f64]) -> Result<Vec<f64>> {
    check_sample(model, x)?;
    let mut referenced: Vec<usize> = Vec::new();
    for tree in &model.trees {
        for node in &tree.nodes {
            if let TreeNode::Split { feature, .. } = *node {
                if !referenced.contains(&feature) {
                    referenced.push(feature);
                }
            }
        }
    }
    referenced.sort_unstable();
    let m = referenced.len();
    let mut phi = vec![0.0; model.n_features()];
    if m == 0 {
        return Ok(phi);
    }
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::Explain(format!(
            "brute-force enumeration over {m} features exceeds the \
             {BRUTE_FORCE_MAX_FEATURES}-feature limit"
        )));
    }

    // Payoff of every subset, indexed by bitmask over `referenced`.
    let mut payoff = vec![0.0; 1 << m];
    let mut in_subset = vec![false; model.n_features()];
    for (mask, slot) in payoff.iter_mut().enumerate() {
        in_subset.iter_mut().for_each(|b| *b = false);
        for (bit, &j) in referenced.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                in_subset[j] = true;
            }
        }
        let mut total = 0.0;
        for tree in &model.trees {
            total += eval_subset(tree, 0, x, &in_subset)?;
        }
        *slot = total;
    }

    // Shapley weight of a subset of size s among m players.
    let weights: Vec<f64> = (0..m)
        .map(|s| 1.0 / (m as f64 * binomial(m - 1, s)))
        .collect();
    for (bit, &j) in referenced.iter().enumerate() {
        let j_bit = 1usize << bit;
        for mask in 0..payoff.len() {
            if mask & j_bit == 0 {
                let s = mask.count_ones() as usize;
                phi[j] += weights[s] * (payoff[mask | j_bit] - payoff[mask]);
            }
        }
    }
    Ok(phi)
}
