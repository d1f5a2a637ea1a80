//! Exact-greedy tree growing and the boosting loop.
//!
//! The implementation is organized around [`Booster`], an incremental
//! trainer that owns all working buffers and adds one tree per
//! [`Booster::step`] call. [`fit`] is the convenience wrapper that runs
//! the configured number of rounds. Because boosting is sequential, the
//! first `k` trees of a longer run are exactly the model a `k`-round
//! run would produce; cross-validation exploits this to score several
//! tree counts from a single pass.
//!
//! Determinism: the fit never consults thread state or iterates hash
//! maps. Columns are scanned in feature order, rows in a fixed
//! presorted order, and all floating-point accumulation happens in that
//! same order on every run. Split ties are broken by higher gain, then
//! lower feature index, then lower threshold.

use crate::data::Cohort;
use crate::error::{Error, Result};

use super::{
    clamp_prob, logistic_grad_hess, logit, sigmoid, BoostedModel, TrainConfig, Tree, TreeNode,
    MODEL_SCHEMA_VERSION,
};

/// Marks a row whose node is not splitting at the current level.
const INACTIVE: u32 = u32::MAX;

/// A node of the tree being grown.
#[derive(Debug, Clone, Copy)]
struct BuildNode {
    g_sum: f64,
    h_sum: f64,
    /// `(subset position, original feature index, threshold)` once a
    /// split has been chosen.
    split: Option<(usize, usize, f64)>,
    left: usize,
    right: usize,
}

impl BuildNode {
    fn new(g_sum: f64, h_sum: f64) -> Self {
        BuildNode {
            g_sum,
            h_sum,
            split: None,
            left: 0,
            right: 0,
        }
    }
}

/// Best admissible split found for one node, with the deterministic
/// ordering: higher gain wins, then lower feature index, then lower
/// threshold.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    /// Ranking key `G_L²/(H_L+λ) + G_R²/(H_R+λ)`. Within one node the
    /// parent term and γ are constants, so ordering by this key is
    /// ordering by gain — across features too.
    key: f64,
    feature_pos: usize,
    threshold: f64,
}

/// Per-node accumulator used while sweeping one feature column.
#[derive(Debug, Clone, Copy, Default)]
struct ScanState {
    g_left: f64,
    h_left: f64,
    count: u32,
    last_value: f64,
    /// Best key seen for this node in the current feature. Initialized
    /// to the admissibility floor `G²/(H+λ) + 2γ`, so any key that
    /// beats it corresponds to a strictly positive gain.
    best_key: f64,
    best_threshold: f64,
}

/// Incremental trainer: one tree per [`step`](Booster::step) call.
pub struct Booster<'a> {
    train: &'a Cohort,
    config: TrainConfig,
    /// Original feature indices eligible for splits.
    features: Vec<usize>,
    base_score: f64,
    /// Per selected feature: row indices sorted by value (value ties by
    /// row index), and the values in that same order.
    sorted_rows: Vec<Vec<u32>>,
    sorted_vals: Vec<Vec<f64>>,
    /// Per-row sample weight (scale_pos_weight for positives).
    weights: Vec<f64>,
    labels: Vec<f64>,
    /// Current margin per training row.
    margins: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    /// Arena node id each row currently sits in (during growth).
    assign: Vec<u32>,
    trees: Vec<Tree>,
    training_log: Vec<f64>,
}

impl<'a> Booster<'a> {
    /// Validate inputs and set up working buffers. `features` are
    /// original column indices; they must be distinct, in range, and
    /// non-empty. The subset is sorted internally, so gain ties always
    /// resolve toward the lowest original feature index no matter how
    /// the caller ordered the slice.
    pub fn new(train: &'a Cohort, features: &[usize], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = train.n_subjects();
        let (neg, pos) = train.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::Training(format!(
                "training cohort must contain both classes, got {neg} negatives / {pos} positives"
            )));
        }
        if features.is_empty() {
            return Err(Error::Training("feature subset is empty".into()));
        }
        let mut seen = vec![false; train.n_features()];
        for &j in features {
            if j >= train.n_features() {
                return Err(Error::Training(format!(
                    "feature index {j} out of range for {} features",
                    train.n_features()
                )));
            }
            if seen[j] {
                return Err(Error::Training(format!(
                    "feature index {j} appears twice in the subset"
                )));
            }
            seen[j] = true;
        }
        let mut features = features.to_vec();
        features.sort_unstable();

        let base_score = match config.base_score {
            Some(b) => b,
            None => train.prevalence(),
        };
        if !(base_score > 0.0 && base_score < 1.0) {
            return Err(Error::Training(format!(
                "resolved base score {base_score} must be strictly inside (0, 1)"
            )));
        }

        let mut sorted_rows = Vec::with_capacity(features.len());
        let mut sorted_vals = Vec::with_capacity(features.len());
        for &j in &features {
            let col = train.column(j);
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_unstable_by(|&a, &b| {
                col[a as usize]
                    .partial_cmp(&col[b as usize])
                    .expect("cohort values are finite")
                    .then(a.cmp(&b))
            });
            let vals: Vec<f64> = order.iter().map(|&r| col[r as usize]).collect();
            sorted_rows.push(order);
            sorted_vals.push(vals);
        }

        let weights: Vec<f64> = train
            .labels()
            .iter()
            .map(|&y| if y == 1 { config.scale_pos_weight } else { 1.0 })
            .collect();
        let labels: Vec<f64> = train.labels().iter().map(|&y| f64::from(y)).collect();
        let margins = vec![logit(base_score); n];

        Ok(Booster {
            train,
            config: config.clone(),
            features,
            base_score,
            sorted_rows,
            sorted_vals,
            weights,
            labels,
            margins,
            grad: vec![0.0; n],
            hess: vec![0.0; n],
            assign: vec![0; n],
            trees: Vec::new(),
            training_log: Vec::new(),
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    /// Grow one tree on the current gradients and update margins and
    /// the training log. Returns the new training loss.
    pub fn step(&mut self) -> Result<f64> {
        let n = self.train.n_subjects();
        for i in 0..n {
            let p = clamp_prob(sigmoid(self.margins[i]));
            let (g, h) = logistic_grad_hess(p, self.labels[i], self.weights[i]);
            self.grad[i] = g;
            self.hess[i] = h;
        }
        let tree = self.grow_tree();
        // `grow_tree` leaves `assign` pointing at the arena leaf for
        // every row, and arena ids equal final node ids.
        for i in 0..n {
            if let TreeNode::Leaf { weight, .. } = tree.nodes[self.assign[i] as usize] {
                self.margins[i] += weight;
            } else {
                return Err(Error::Contract(
                    "row assigned to an internal node after growth".into(),
                ));
            }
        }
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for i in 0..n {
            let p = clamp_prob(sigmoid(self.margins[i]));
            let y = self.labels[i];
            loss_sum -= self.weights[i] * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            weight_sum += self.weights[i];
        }
        let loss = loss_sum / weight_sum;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite training loss at iteration {}",
                self.trees.len() + 1
            )));
        }
        self.trees.push(tree);
        self.training_log.push(loss);
        Ok(loss)
    }

    /// Add the latest tree's contribution to externally tracked margins
    /// (e.g. a validation fold). Must be called once after each
    /// [`step`](Booster::step) to stay in sync.
    pub fn apply_last_tree(&self, cohort: &Cohort, margins: &mut [f64]) -> Result<()> {
        let tree = self
            .trees
            .last()
            .ok_or_else(|| Error::Contract("apply_last_tree before any step".into()))?;
        if margins.len() != cohort.n_subjects() {
            return Err(Error::Contract(format!(
                "margin buffer has {} entries for {} rows",
                margins.len(),
                cohort.n_subjects()
            )));
        }
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.output(cohort.row(i));
        }
        Ok(())
    }

    /// Initial margin vector for any cohort scored by this booster.
    pub fn initial_margins(&self, cohort: &Cohort) -> Vec<f64> {
        vec![logit(self.base_score); cohort.n_subjects()]
    }

    /// Snapshot the current ensemble as a finished model.
    pub fn model(&self) -> BoostedModel {
        BoostedModel {
            schema_version: MODEL_SCHEMA_VERSION,
            config: self.config.clone(),
            base_score: self.base_score,
            feature_names: self.train.feature_names().to_vec(),
            trees: self.trees.clone(),
            training_log: self.training_log.clone(),
        }
    }

    /// Level-wise exact-greedy growth of a single tree.
    fn grow_tree(&mut self) -> Tree {
        let n = self.train.n_subjects();
        let lambda = self.config.reg_lambda;
        let gamma = self.config.gamma;
        let mcw = self.config.min_child_weight;

        let mut root_g = 0.0;
        let mut root_h = 0.0;
        for i in 0..n {
            root_g += self.grad[i];
            root_h += self.hess[i];
        }
        let mut arena = vec![BuildNode::new(root_g, root_h)];
        self.assign.fill(0);
        // Node ids of the current level, in arena order.
        let mut level: Vec<usize> = vec![0];

        let mut level_pos: Vec<u32> = Vec::new();
        let mut states: Vec<ScanState> = Vec::new();
        let mut best: Vec<Option<Candidate>> = Vec::new();
        // Per active node: (G, H) totals and the admissibility floor
        // for the ranking key.
        let mut node_g: Vec<f64> = Vec::new();
        let mut node_h: Vec<f64> = Vec::new();
        let mut node_floor: Vec<f64> = Vec::new();

        for _depth in 0..self.config.max_depth {
            if level.is_empty() {
                break;
            }
            level_pos.clear();
            level_pos.resize(arena.len(), INACTIVE);
            node_g.clear();
            node_h.clear();
            node_floor.clear();
            for (pos, &id) in level.iter().enumerate() {
                level_pos[id] = pos as u32;
                let node = &arena[id];
                node_g.push(node.g_sum);
                node_h.push(node.h_sum);
                // A split is admissible iff
                //   ½·(key − G²/(H+λ)) − γ > 0  ⇔  key > G²/(H+λ) + 2γ.
                node_floor.push(node.g_sum * node.g_sum / (node.h_sum + lambda) + 2.0 * gamma);
            }
            best.clear();
            best.resize(level.len(), None);

            // Sweep features in order; within a feature, rows in
            // ascending value order. Every boundary between distinct
            // values inside a node is a candidate threshold.
            for (feature_pos, (rows, vals)) in self
                .sorted_rows
                .iter()
                .zip(&self.sorted_vals)
                .enumerate()
            {
                states.clear();
                states.extend(node_floor.iter().map(|&floor| ScanState {
                    best_key: floor,
                    ..ScanState::default()
                }));
                for (&r, &v) in rows.iter().zip(vals) {
                    let pos = level_pos[self.assign[r as usize] as usize];
                    if pos == INACTIVE {
                        continue;
                    }
                    let st = &mut states[pos as usize];
                    if st.count > 0 && v != st.last_value {
                        // Midpoint threshold; the guard rejects
                        // midpoints that collapse onto the left value
                        // for adjacent floats.
                        let threshold = 0.5 * (st.last_value + v);
                        let h_r = node_h[pos as usize] - st.h_left;
                        if threshold > st.last_value && st.h_left >= mcw && h_r >= mcw {
                            let g_r = node_g[pos as usize] - st.g_left;
                            let key = st.g_left * st.g_left / (st.h_left + lambda)
                                + g_r * g_r / (h_r + lambda);
                            // Strict improvement only: thresholds are
                            // scanned ascending, so the lowest
                            // threshold wins key ties.
                            if key > st.best_key {
                                st.best_key = key;
                                st.best_threshold = threshold;
                            }
                        }
                    }
                    st.g_left += self.grad[r as usize];
                    st.h_left += self.hess[r as usize];
                    st.count += 1;
                    st.last_value = v;
                }
                // Merge this feature's winners; strict comparison keeps
                // the lowest feature index on exact key ties.
                for (pos, st) in states.iter().enumerate() {
                    if st.best_key > node_floor[pos]
                        && best[pos].map_or(true, |b| st.best_key > b.key)
                    {
                        best[pos] = Some(Candidate {
                            key: st.best_key,
                            feature_pos,
                            threshold: st.best_threshold,
                        });
                    }
                }
            }

            // Materialize the chosen splits; children are appended in
            // level order so node ids are breadth-first.
            let mut next_level = Vec::new();
            let mut any_split = false;
            for (pos, &id) in level.iter().enumerate() {
                if let Some(c) = best[pos] {
                    let left = arena.len();
                    let right = left + 1;
                    arena.push(BuildNode::new(0.0, 0.0));
                    arena.push(BuildNode::new(0.0, 0.0));
                    arena[id].split = Some((c.feature_pos, self.features[c.feature_pos], c.threshold));
                    arena[id].left = left;
                    arena[id].right = right;
                    next_level.push(left);
                    next_level.push(right);
                    any_split = true;
                }
            }
            if !any_split {
                break;
            }

            // Route rows to their children in row order, accumulating
            // child statistics in that same deterministic order.
            for i in 0..n {
                let id = self.assign[i] as usize;
                let pos = level_pos[id];
                if pos == INACTIVE {
                    continue;
                }
                if let Some((feature_pos, _, threshold)) = arena[id].split {
                    let v = self.value_in_sorted_feature(feature_pos, i);
                    let child = if v < threshold {
                        arena[id].left
                    } else {
                        arena[id].right
                    };
                    arena[child].g_sum += self.grad[i];
                    arena[child].h_sum += self.hess[i];
                    self.assign[i] = child as u32;
                }
            }
            level = next_level;
        }

        // Convert the arena: unsplit nodes become leaves with the
        // Newton-optimal shrunken weight.
        let lr = self.config.learning_rate;
        let nodes: Vec<TreeNode> = arena
            .iter()
            .map(|b| match b.split {
                Some((_, feature, threshold)) => TreeNode::Split {
                    feature,
                    threshold,
                    left: b.left,
                    right: b.right,
                    cover: b.h_sum,
                },
                None => TreeNode::Leaf {
                    weight: -b.g_sum / (b.h_sum + lambda) * lr,
                    cover: b.h_sum,
                },
            })
            .collect();
        Tree { nodes }
    }

    /// Value of row `i` in the `feature_pos`-th selected feature.
    fn value_in_sorted_feature(&self, feature_pos: usize, i: usize) -> f64 {
        self.train.value(i, self.features[feature_pos])
    }
}

/// Fit a boosted model on `train`, splitting only on `features`
/// (original column indices), for `config.n_trees` rounds.
pub fn fit(train: &Cohort, features: &[usize], config: &TrainConfig) -> Result<BoostedModel> {
    let mut booster = Booster::new(train, features, config)?;
    for _ in 0..config.n_trees {
        booster.step()?;
    }
    Ok(booster.model())
}
