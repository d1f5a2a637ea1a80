//! A deterministic second-order gradient-boosted tree learner for
//! binary outcomes.
//!
//! Training minimizes logistic loss with a per-tree Newton step, the
//! classic formulation: with prediction probability `p`, label `y` and
//! sample weight `w`, the gradient is `w·(p − y)` and the hessian
//! `w·p·(1 − p)`; split quality is the regularized gain
//!
//! ```text
//! gain = ½ · [ G_L²/(H_L + λ) + G_R²/(H_R + λ) − (G_L+G_R)²/(H_L+H_R + λ) ] − γ
//! ```
//!
//! and a leaf outputs `−G/(H + λ) · learning_rate`.
//!
//! Trees are grown level-by-level with exact greedy split search over
//! every distinct value midpoint; rows with `value < threshold` go
//! left. Fitting is fully sequential and allocation-stable, so a model
//! is bit-for-bit reproducible for a fixed input regardless of how many
//! worker threads the surrounding pipeline uses.
//!
//! Models serialize to a single JSON document with an explicit schema
//! version; trees are stored node-major with index links (node 0 is the
//! root, children always have larger indices than their parent).

mod train;

pub use train::{fit, Booster};

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into every persisted model.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Probabilities are kept inside `[PROB_CLAMP, 1 − PROB_CLAMP]` during
/// training and prediction so logits and losses stay finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Training hyper-parameters. `Default` gives the reference setup used
/// throughout this crate: 200 trees of depth 4 at learning rate 0.1
/// with L2 regularization 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of boosting rounds; must be at least 1.
    pub n_trees: usize,
    /// Maximum tree depth (root = depth 0); must be at least 1.
    pub max_depth: usize,
    /// Shrinkage applied to every leaf weight, in (0, 1].
    pub learning_rate: f64,
    /// L2 penalty λ on leaf weights, ≥ 0.
    pub reg_lambda: f64,
    /// Minimum gain γ required to keep a split, ≥ 0.
    pub gamma: f64,
    /// Minimum hessian sum on each side of a split, ≥ 0.
    pub min_child_weight: f64,
    /// Multiplier on the weight of positive-class samples, > 0.
    pub scale_pos_weight: f64,
    /// Initial score as a probability. `None` uses the training
    /// prevalence.
    pub base_score: Option<f64>,
    /// Reserved for stochastic extensions; echoed into the model file
    /// so a persisted config is complete. The exact-greedy fit itself
    /// draws no random numbers.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            reg_lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            scale_pos_weight: 1.0,
            base_score: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Training("n_trees must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Training("max_depth must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Training(format!(
                "learning_rate {} must be in (0, 1]",
                self.learning_rate
            )));
        }
        for (name, v) in [("reg_lambda", self.reg_lambda), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Training(format!(
                    "{name} {v} must be finite and non-negative"
                )));
            }
        }
        if !self.min_child_weight.is_finite() || self.min_child_weight < 0.0 {
            return Err(Error::Training(format!(
                "min_child_weight {} must be finite and non-negative",
                self.min_child_weight
            )));
        }
        if !self.scale_pos_weight.is_finite() || self.scale_pos_weight <= 0.0 {
            return Err(Error::Training(format!(
                "scale_pos_weight {} must be finite and positive",
                self.scale_pos_weight
            )));
        }
        if let Some(b) = self.base_score {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Training(format!(
                    "base_score {b} must be strictly between 0 and 1"
                )));
            }
        }
        Ok(())
    }
}

/// One node of a decision tree, linked by indices into the tree's node
/// array. `cover` is the hessian sum of the training rows that reached
/// the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        /// Feature index in the cohort's original column order.
        feature: usize,
        /// Rows with `value < threshold` go left, others right.
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf { weight: f64, cover: f64 },
}

impl TreeNode {
    pub fn cover(&self) -> f64 {
        match *self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => cover,
        }
    }
}

/// A single regression tree: node-major storage, node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Margin contribution of this tree for one feature row.
    pub fn output(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                TreeNode::Leaf { weight, .. } => return weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    /// Structural validation: every node reachable exactly once,
    /// children strictly after their parent, features within arity,
    /// and all numbers finite.
    fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Training("tree has no nodes".into()));
        }
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        let mut reached = 0usize;
        while let Some(idx) = stack.pop() {
            if idx >= n {
                return Err(Error::Training(format!(
                    "tree links to node {idx} beyond its {n} nodes"
                )));
            }
            if seen[idx] {
                return Err(Error::Training(format!(
                    "tree node {idx} is reachable along two paths"
                )));
            }
            seen[idx] = true;
            reached += 1;
            match self.nodes[idx] {
                TreeNode::Leaf { weight, cover } => {
                    if !weight.is_finite() || !cover.is_finite() || cover < 0.0 {
                        return Err(Error::Training(format!(
                            "leaf {idx} has non-finite or negative fields"
                        )));
                    }
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                } => {
                    if feature >= n_features {
                        return Err(Error::Training(format!(
                            "split {idx} references feature {feature}, arity is {n_features}"
                        )));
                    }
                    if !threshold.is_finite() || !cover.is_finite() || cover < 0.0 {
                        return Err(Error::Training(format!(
                            "split {idx} has non-finite or negative fields"
                        )));
                    }
                    if left <= idx || right <= idx || left == right {
                        return Err(Error::Training(format!(
                            "split {idx} children ({left}, {right}) must be two distinct later nodes"
                        )));
                    }
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        if reached != n {
            return Err(Error::Training(format!(
                "tree has {n} nodes but only {reached} are reachable from the root"
            )));
        }
        Ok(())
    }
}

/// A fitted boosted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub schema_version: u32,
    /// The configuration the model was fitted with.
    pub config: TrainConfig,
    /// Resolved initial score as a probability (the training prevalence
    /// when the config left `base_score` unset).
    pub base_score: f64,
    /// Column names of the cohort the model was fitted on; defines the
    /// arity every prediction input must have.
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Weighted mean training loss after each boosting round.
    pub training_log: Vec<f64>,
}

impl BoostedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// The initial margin: `logit(base_score)`.
    pub fn base_margin(&self) -> f64 {
        logit(self.base_score)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Prediction(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Prediction(format!(
                "non-finite value in feature '{}'",
                self.feature_names[j]
            )));
        }
        Ok(())
    }

    /// Raw additive score: `logit(base_score)` plus every tree's
    /// output, accumulated in tree order.
    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut margin = self.base_margin();
        for tree in &self.trees {
            margin += tree.output(x);
        }
        Ok(margin)
    }

    /// Predicted event probability, clamped inside (0, 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(clamp_prob(sigmoid(self.predict_margin(x)?)))
    }

    /// Margins for every row of a cohort.
    pub fn predict_margins(&self, cohort: &crate::data::Cohort) -> Result<Vec<f64>> {
        (0..cohort.n_subjects())
            .map(|i| self.predict_margin(cohort.row(i)))
            .collect()
    }

    /// Probabilities for every row of a cohort.
    pub fn predict_probs(&self, cohort: &crate::data::Cohort) -> Result<Vec<f64>> {
        Ok(self
            .predict_margins(cohort)?
            .into_iter()
            .map(|m| clamp_prob(sigmoid(m)))
            .collect())
    }

    /// Full structural validation, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::ModelSchema {
                found: self.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        self.config.validate()?;
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return Err(Error::Training(format!(
                "base_score {} must be strictly between 0 and 1",
                self.base_score
            )));
        }
        if self.feature_names.is_empty() {
            return Err(Error::Training("model has no feature names".into()));
        }
        if !self.training_log.is_empty() && self.training_log.len() != self.trees.len() {
            return Err(Error::Training(format!(
                "training log has {} entries for {} trees",
                self.training_log.len(),
                self.trees.len()
            )));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(self.n_features())
                .map_err(|e| Error::Training(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }
}

/// Gradient and hessian of the logistic loss at probability `p` for
/// label `y` with sample weight `w`: `(w·(p − y), w·p·(1 − p))`.
pub fn logistic_grad_hess(p: f64, y: f64, w: f64) -> (f64, f64) {
    (w * (p - y), w * p * (1.0 - p))
}

/// Regularized split gain for child statistics `(g_l, h_l)` and
/// `(g_r, h_r)` with L2 penalty `lambda` and split penalty `gamma`.
pub fn split_gain(g_l: f64, h_l: f64, g_r: f64, h_r: f64, lambda: f64, gamma: f64) -> f64 {
    let parent_g = g_l + g_r;
    let parent_h = h_l + h_r;
    0.5 * (g_l * g_l / (h_l + lambda) + g_r * g_r / (h_r + lambda)
        - parent_g * parent_g / (parent_h + lambda))
        - gamma
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`]; input must be strictly inside (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Write a model as pretty-printed JSON. Serialization is fully
/// deterministic: field order is fixed by the struct definitions and
/// floats use shortest round-trip formatting.
pub fn save_model<P: AsRef<Path>>(model: &BoostedModel, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    save_model_to(model, file)
}

/// Same as [`save_model`] but to any writer.
pub fn save_model_to<W: Write>(model: &BoostedModel, mut writer: W) -> Result<()> {
    let text = serde_json::to_string_pretty(model)?;
    writer.write_all(text.as_bytes())?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Load and validate a model saved by [`save_model`]. Truncated or
/// structurally inconsistent files are rejected, as is any schema
/// version other than [`MODEL_SCHEMA_VERSION`].
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<BoostedModel> {
    let file = std::fs::File::open(path.as_ref())?;
    load_model_from(file)
}

/// Same as [`load_model`] but from any reader.
pub fn load_model_from<R: Read>(reader: R) -> Result<BoostedModel> {
    let model: BoostedModel = serde_json::from_reader(reader)?;
    model.validate()?;
    Ok(model)
}

/// Result of replaying a model against its training cohort: maximum
/// absolute deviations from the quantities boosting should have
/// produced. All three are ~1e-12 for a correctly fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelAudit {
    /// Worst `|stored leaf weight − (−G/(H+λ))·learning_rate|` over all
    /// leaves, with G and H recomputed from the replayed margins.
    pub max_leaf_weight_error: f64,
    /// Worst `|stored cover − recomputed hessian sum|` over all nodes.
    pub max_cover_error: f64,
    /// Worst `|parent cover − (left cover + right cover)|` over all
    /// internal nodes, using the stored covers.
    pub max_cover_gap: f64,
}

/// Replay the boosting process on `cohort` (which must be the cohort
/// the model was fitted on) and check two invariants of every tree:
/// leaf weights are the Newton-optimal `−G/(H+λ)·learning_rate` for the
/// rows the leaf receives, and each node's stored cover equals the
/// hessian sum of the rows routed to it.
pub fn audit_model(model: &BoostedModel, cohort: &crate::data::Cohort) -> Result<ModelAudit> {
    model.validate()?;
    if cohort.n_features() != model.n_features() {
        return Err(Error::Prediction(format!(
            "cohort has {} features, model expects {}",
            cohort.n_features(),
            model.n_features()
        )));
    }
    let n = cohort.n_subjects();
    let spw = model.config.scale_pos_weight;
    let lambda = model.config.reg_lambda;
    let lr = model.config.learning_rate;
    let mut margins = vec![model.base_margin(); n];
    let mut audit = ModelAudit {
        max_leaf_weight_error: 0.0,
        max_cover_error: 0.0,
        max_cover_gap: 0.0,
    };
    let mut node_g = Vec::new();
    let mut node_h = Vec::new();
    for tree in &model.trees {
        node_g.clear();
        node_g.resize(tree.nodes.len(), 0.0);
        node_h.clear();
        node_h.resize(tree.nodes.len(), 0.0);
        // Route every row down the tree, accumulating g/h along the
        // whole path in row order (matching the order used during
        // fitting).
        for i in 0..n {
            let x = cohort.row(i);
            let y = f64::from(cohort.labels()[i]);
            let w = if cohort.labels()[i] == 1 { spw } else { 1.0 };
            let p = clamp_prob(sigmoid(margins[i]));
            let (g, h) = logistic_grad_hess(p, y, w);
            let mut idx = 0usize;
            loop {
                node_g[idx] += g;
                node_h[idx] += h;
                match tree.nodes[idx] {
                    TreeNode::Leaf { .. } => break,
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        ..
                    } => idx = if x[feature] < threshold { left } else { right },
                }
            }
        }
        for (idx, node) in tree.nodes.iter().enumerate() {
            match *node {
                TreeNode::Leaf { weight, cover } => {
                    let expected = -node_g[idx] / (node_h[idx] + lambda) * lr;
                    audit.max_leaf_weight_error =
                        audit.max_leaf_weight_error.max((weight - expected).abs());
                    audit.max_cover_error =
                        audit.max_cover_error.max((cover - node_h[idx]).abs());
                }
                TreeNode::Split {
                    left, right, cover, ..
                } => {
                    audit.max_cover_error =
                        audit.max_cover_error.max((cover - node_h[idx]).abs());
                    let child_sum = tree.nodes[left].cover() + tree.nodes[right].cover();
                    audit.max_cover_gap = audit.max_cover_gap.max((cover - child_sum).abs());
                }
            }
        }
        for i in 0..n {
            margins[i] += tree.output(cohort.row(i));
        }
    }
    Ok(audit)
}
