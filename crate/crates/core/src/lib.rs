//! Interpretable risk modeling on probability features.
//!
//! This crate implements a complete tabular risk-prediction pipeline
//! aimed at low-prevalence clinical outcomes where every feature is a
//! probability in `[0, 1]` (e.g. the output head of an upstream signal
//! encoder):
//!
//! * [`data`] — cohort container, CSV ingestion, stratified splits, and
//!   a synthetic cohort generator with planted structure;
//! * [`select`] — a three-stage feature-selection pipeline (variance
//!   filter, correlation pruning, entropy-ordered forward selection);
//! * [`gbdt`] — a deterministic second-order gradient-boosted tree
//!   learner for binary outcomes;
//! * [`tune`] — stratified k-fold cross-validation and grid search;
//! * [`metrics`] — ROC / PR curves, threshold metrics, and report
//!   assembly;
//! * [`explain`] — exact per-prediction attributions for tree
//!   ensembles, plus the plot-ready summaries built from them;
//! * [`erroranalysis`] — confusion-cell partitioning and Welch's
//!   t-test comparisons between outcome groups;
//! * [`baselines`] — a k-nearest-neighbour reference model.
//!
//! Everything randomized takes an explicit seed; fitting, splitting,
//! and attribution are bit-reproducible for a fixed input regardless of
//! the worker count.

pub mod baselines;
pub mod data;
pub mod error;
pub mod erroranalysis;
pub mod explain;
pub mod gbdt;
pub mod metrics;
pub mod select;
pub mod tune;

pub use data::{
    load_cohort, simulate_cohort, stratified_split, write_cohort, Cohort, SimConfig, SplitSpec,
};
pub use error::{Error, Result};
pub use gbdt::{
    audit_model, fit, load_model, logistic_grad_hess, save_model, split_gain, BoostedModel,
    Booster, ModelAudit, TrainConfig, Tree, TreeNode,
};
pub use baselines::{
    knn_evaluate, knn_scores, tune_k, DistanceMetric, KnnConfig, KnnCvResult, KnnTuneReport,
    VoteWeighting, DEFAULT_K_CANDIDATES,
};
pub use erroranalysis::{
    fn_vs_tp_report, fp_case_study, ln_gamma, partition_outcomes, regularized_incomplete_beta,
    student_t_cdf, two_sided_t_p, welch_t_test, CaseStudy, ErrorAnalysisReport,
    FeatureComparison, OutcomePartition, PriorComparison, WelchTTest, DEFAULT_ALPHA,
    DEGENERATE_P, DEGENERATE_T, PRIOR_COHORT_COMPARISONS,
};
pub use explain::{
    brute_force_shapley, expected_margin, explain_cohort, explain_sample, tree_shap,
    AttributionSet, DependencePoint, FeatureImportance, SummaryFeature, SummaryPoint, Waterfall,
    WaterfallStep, BRUTE_FORCE_MAX_FEATURES, DEFAULT_TOP_K,
};
pub use select::{
    correlation_prune, entropy_ranking, feature_entropy, forward_select, pearson,
    selection_pipeline, variance_filter, CorrelatedDrop, ForwardOutcome, PruneOutcome,
    SelectionParams, SelectionReport, VarianceFilterOutcome, DEFAULT_CORRELATION_THRESHOLD,
    DEFAULT_DOMINANCE_THRESHOLD,
};
pub use metrics::{
    auc_roc, average_precision, confusion_at, cross_check_reported, f1_score, pr_curve,
    roc_curve, summarize, ConfusionMatrix, EvalReport, ReportCrossCheck,
};
pub use tune::{grid_search, stratified_kfold, CvResult, Grid, GridSearchReport};
