//! The pipeline stages behind every subcommand. Each stage loads its
//! inputs from disk, recomputes the deterministic train/test split
//! from the `split` config section, does its work, writes artifacts
//! plus a manifest, and returns the manifest path so `run-all` can
//! chain and verify the whole sequence.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use riskboost_core::{
    explain_cohort, fit, fn_vs_tp_report, fp_case_study, grid_search, knn_evaluate, load_model,
    save_model, selection_pipeline, simulate_cohort, stratified_split, summarize, tune_k,
    BoostedModel, Cohort, EvalReport, KnnConfig, SelectionParams, SelectionReport, SplitSpec,
};

use crate::config::{RunConfig, SplitChoice};
use crate::manifest::{verify_manifest, RunManifest};
use crate::svg;

/// Resolved invocation state shared by every stage.
pub struct Ctx {
    pub config: RunConfig,
    /// Master seed after flag/env/config resolution.
    pub seed: u64,
    /// Requested worker count (0 = all cores), echoed into manifests.
    pub workers: usize,
    /// Render SVG figures next to the CSV figure data.
    pub svg: bool,
}

impl Ctx {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, &self.config, self.seed, self.workers)
    }

    fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.config.split.test_fraction,
            seed: self.config.split.seed,
        }
    }
}

fn load_cohort(path: &Path) -> anyhow::Result<Cohort> {
    riskboost_core::load_cohort(path, None)
        .with_context(|| format!("loading cohort '{}'", path.display()))
}

fn load_boosted(path: &Path) -> anyhow::Result<BoostedModel> {
    load_model(path).with_context(|| format!("loading model '{}'", path.display()))
}

/// The rows a scoring stage works on; "train" and "test" always mean
/// the same deterministic partition.
fn target_rows<'a>(
    choice: SplitChoice,
    cohort: &'a Cohort,
    train: &'a Cohort,
    test: &'a Cohort,
) -> &'a Cohort {
    match choice {
        SplitChoice::Train => train,
        SplitChoice::Test => test,
        SplitChoice::All => cohort,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut file =
        File::create(path).with_context(|| format!("creating '{}'", path.display()))?;
    serde_json::to_writer_pretty(&mut file, value)
        .with_context(|| format!("writing '{}'", path.display()))?;
    file.write_all(b"\n")?;
    Ok(())
}

fn write_svg(path: &Path, content: &str) -> anyhow::Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing '{}'", path.display()))
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating '{}'", path.display()))
}

/// Read a selection report and return its winning feature subset, or
/// every feature when no report is given.
fn resolve_features(
    selection: Option<&Path>,
    cohort: &Cohort,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<usize>> {
    match selection {
        None => Ok((0..cohort.n_features()).collect()),
        Some(path) => {
            let file = File::open(path)
                .with_context(|| format!("opening selection report '{}'", path.display()))?;
            let report: SelectionReport = serde_json::from_reader(file)
                .with_context(|| format!("parsing selection report '{}'", path.display()))?;
            manifest.record_input(path)?;
            anyhow::ensure!(
                !report.selected.is_empty(),
                "selection report '{}' selected no features",
                path.display()
            );
            if let Some(&bad) = report.selected.iter().find(|&&j| j >= cohort.n_features()) {
                anyhow::bail!(
                    "selection report '{}' names feature {bad}, but the cohort has {} features",
                    path.display(),
                    cohort.n_features()
                );
            }
            Ok(report.selected)
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(ctx: &Ctx, out: &Path) -> anyhow::Result<PathBuf> {
    let mut sim = ctx.config.simulate.clone();
    sim.seed = ctx.seed;
    let cohort = simulate_cohort(&sim)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory '{}'", dir.display()))?;
    }
    riskboost_core::write_cohort(&cohort, out)
        .with_context(|| format!("writing cohort '{}'", out.display()))?;

    let mut manifest = ctx.manifest("simulate");
    manifest.record_output(out)?;
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty());
    let manifest_path = manifest.write(dir.unwrap_or(Path::new(".")))?;

    println!(
        "simulate: {} subjects x {} features, prevalence {:.4}, seed {} -> {}",
        cohort.n_subjects(),
        cohort.n_features(),
        cohort.prevalence(),
        ctx.seed,
        out.display()
    );
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

pub fn select(ctx: &Ctx, cohort_path: &Path, out_dir: &Path) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let cohort = load_cohort(cohort_path)?;
    let (train, _test) = stratified_split(&cohort, &ctx.split_spec())?;

    let section = &ctx.config.select;
    let params = SelectionParams {
        dominance_threshold: section.dominance_threshold,
        correlation_threshold: section.correlation_threshold,
        cv_folds: section.cv_folds,
        seed: section.seed,
        train_config: section.train_config.clone(),
    };
    let report = selection_pipeline(&train, &params)?;

    let report_path = out_dir.join("selection.json");
    write_json(&report_path, &report)?;

    let series_path = out_dir.join("prefix_auc.csv");
    let mut wtr = csv_writer(&series_path)?;
    wtr.write_record(["prefix_len", "feature_index", "feature_name", "cv_auc"])?;
    for (i, auc) in report.auc_series.iter().enumerate() {
        let j = report.ranked_candidates[i];
        wtr.write_record([
            (i + 1).to_string(),
            j.to_string(),
            cohort.feature_names()[j].clone(),
            auc.to_string(),
        ])?;
    }
    wtr.flush()?;

    let mut manifest = ctx.manifest("select");
    manifest.record_input(cohort_path)?;
    manifest.record_output(&report_path)?;
    manifest.record_output(&series_path)?;
    let manifest_path = manifest.write(out_dir)?;

    println!(
        "select: dropped {} low-variance and {} correlated features; selected {} of {} (best CV AUC {:.4})",
        report.dropped_low_variance.len(),
        report.dropped_correlated.len(),
        report.selected.len(),
        cohort.n_features(),
        report.best_auc
    );
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn train(
    ctx: &Ctx,
    cohort_path: &Path,
    selection: Option<&Path>,
    out_dir: &Path,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let cohort = load_cohort(cohort_path)?;
    let (train, _test) = stratified_split(&cohort, &ctx.split_spec())?;

    let mut manifest = ctx.manifest("train");
    manifest.record_input(cohort_path)?;
    let features = resolve_features(selection, &cohort, &mut manifest)?;

    let section = &ctx.config.train;
    let search = grid_search(&train, &features, &section.grid, section.cv_folds, section.seed)?;
    let model = fit(&train, &features, &search.best.config)?;

    let model_path = out_dir.join("model.json");
    save_model(&model, &model_path)
        .with_context(|| format!("writing model '{}'", model_path.display()))?;
    let cv_path = out_dir.join("cv_results.json");
    write_json(&cv_path, &search)?;

    manifest.record_output(&model_path)?;
    manifest.record_output(&cv_path)?;
    let manifest_path = manifest.write(out_dir)?;

    println!(
        "train: best of {} candidates -> {} trees / depth {} / lr {} / pos weight {:.2} (CV AP {:.4}) on {} features",
        search.results.len(),
        search.best.config.n_trees,
        search.best.config.max_depth,
        search.best.config.learning_rate,
        search.best.config.scale_pos_weight,
        search.best.mean_score,
        features.len()
    );
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn evaluate(
    ctx: &Ctx,
    model_path: &Path,
    cohort_path: &Path,
    out_dir: &Path,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let model = load_boosted(model_path)?;
    let cohort = load_cohort(cohort_path)?;
    let (train, test) = stratified_split(&cohort, &ctx.split_spec())?;
    let section = &ctx.config.evaluate;
    let target = target_rows(section.split, &cohort, &train, &test);

    let scores = model.predict_probs(target)?;
    let report = summarize(&scores, target.labels(), section.threshold)?;

    let eval_path = out_dir.join("eval.json");
    write_json(&eval_path, &report)?;

    let roc_path = out_dir.join("roc.csv");
    let mut wtr = csv_writer(&roc_path)?;
    wtr.write_record(["false_positive_rate", "true_positive_rate"])?;
    for (fpr, tpr) in &report.roc_points {
        wtr.write_record([fpr.to_string(), tpr.to_string()])?;
    }
    wtr.flush()?;

    let pr_path = out_dir.join("pr.csv");
    let mut wtr = csv_writer(&pr_path)?;
    wtr.write_record(["recall", "precision"])?;
    for (recall, precision) in &report.pr_points {
        wtr.write_record([recall.to_string(), precision.to_string()])?;
    }
    wtr.flush()?;

    let mut manifest = ctx.manifest("evaluate");
    manifest.record_input(model_path)?;
    manifest.record_input(cohort_path)?;
    manifest.record_output(&eval_path)?;
    manifest.record_output(&roc_path)?;
    manifest.record_output(&pr_path)?;

    if ctx.svg {
        let roc_svg = out_dir.join("roc.svg");
        write_svg(&roc_svg, &svg::curve_chart(&[&report.roc_points], true))?;
        let pr_svg = out_dir.join("pr.svg");
        write_svg(&pr_svg, &svg::curve_chart(&[&report.pr_points], false))?;
        manifest.record_output(&roc_svg)?;
        manifest.record_output(&pr_svg)?;
    }
    let manifest_path = manifest.write(out_dir)?;

    println!(
        "evaluate[{}]: ROC AUC {:.4}, AP {:.4}, accuracy {:.4}, F1 {:.4} at threshold {} \
         (TP {} FP {} TN {} FN {})",
        section.split,
        report.auc_roc,
        report.auc_pr,
        report.accuracy,
        report.f1,
        section.threshold,
        report.confusion.true_positives,
        report.confusion.false_positives,
        report.confusion.true_negatives,
        report.confusion.false_negatives
    );
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

pub fn explain(
    ctx: &Ctx,
    model_path: &Path,
    cohort_path: &Path,
    out_dir: &Path,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let model = load_boosted(model_path)?;
    let cohort = load_cohort(cohort_path)?;
    let (train, test) = stratified_split(&cohort, &ctx.split_spec())?;
    let section = &ctx.config.explain;
    let target = target_rows(section.split, &cohort, &train, &test);

    let attributions = explain_cohort(&model, target)?;

    let attributions_path = out_dir.join("attributions.json");
    write_json(&attributions_path, &attributions)?;

    let importance = attributions.global_importance();
    let top: Vec<_> = importance.iter().take(section.top_k).collect();
    let importance_path = out_dir.join("importance.csv");
    let mut wtr = csv_writer(&importance_path)?;
    wtr.write_record(["rank", "feature_index", "feature_name", "mean_abs_attribution"])?;
    for (rank, feature) in top.iter().enumerate() {
        wtr.write_record([
            (rank + 1).to_string(),
            feature.feature_index.to_string(),
            feature.feature_name.clone(),
            feature.mean_abs_phi.to_string(),
        ])?;
    }
    wtr.flush()?;

    let summary = attributions.summary_data(target, section.top_k)?;
    let summary_path = out_dir.join("summary.csv");
    let mut wtr = csv_writer(&summary_path)?;
    wtr.write_record(["feature_index", "feature_name", "attribution", "normalized_value"])?;
    for feature in &summary {
        for point in &feature.points {
            wtr.write_record([
                feature.feature_index.to_string(),
                feature.feature_name.clone(),
                point.phi.to_string(),
                point.normalized_value.to_string(),
            ])?;
        }
    }
    wtr.flush()?;

    let mut manifest = ctx.manifest("explain");
    manifest.record_input(model_path)?;
    manifest.record_input(cohort_path)?;
    manifest.record_output(&attributions_path)?;
    manifest.record_output(&importance_path)?;
    manifest.record_output(&summary_path)?;

    if ctx.svg {
        let bars: Vec<f64> = top.iter().map(|f| f.mean_abs_phi).collect();
        let importance_svg = out_dir.join("importance.svg");
        write_svg(&importance_svg, &svg::bar_chart(&bars))?;

        let rows: Vec<Vec<(f64, f64)>> = summary
            .iter()
            .map(|f| f.points.iter().map(|p| (p.phi, p.normalized_value)).collect())
            .collect();
        let summary_svg = out_dir.join("summary.svg");
        write_svg(&summary_svg, &svg::summary_chart(&rows))?;
        manifest.record_output(&importance_svg)?;
        manifest.record_output(&summary_svg)?;
    }
    let manifest_path = manifest.write(out_dir)?;

    let names: Vec<&str> = top.iter().take(5).map(|f| f.feature_name.as_str()).collect();
    println!(
        "explain[{}]: {} samples attributed, top features: {}",
        section.split,
        target.n_subjects(),
        names.join(", ")
    );
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

/// The false-positive case file is written even when there is nothing
/// to show, so downstream tooling never has to guess.
#[derive(Debug, Serialize)]
struct FpCaseFile {
    threshold: f64,
    note: String,
    case: Option<riskboost_core::CaseStudy>,
}

pub fn errors(
    ctx: &Ctx,
    model_path: &Path,
    cohort_path: &Path,
    out_dir: &Path,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let model = load_boosted(model_path)?;
    let cohort = load_cohort(cohort_path)?;
    let (train, test) = stratified_split(&cohort, &ctx.split_spec())?;
    let section = &ctx.config.errors;
    let target = target_rows(section.split, &cohort, &train, &test);

    let scores = model.predict_probs(target)?;
    let report = fn_vs_tp_report(target, &scores, section.threshold, section.alpha)?;

    let report_path = out_dir.join("error_analysis.json");
    write_json(&report_path, &report)?;

    let table_path = out_dir.join("fn_vs_tp.csv");
    let mut wtr = csv_writer(&table_path)?;
    wtr.write_record([
        "feature_index",
        "feature_name",
        "mean_false_negative",
        "mean_true_positive",
        "t",
        "df",
        "p_value",
        "bonferroni_p",
        "flagged",
    ])?;
    for row in &report.comparisons {
        wtr.write_record([
            row.feature_index.to_string(),
            row.feature_name.clone(),
            row.mean_false_negative.to_string(),
            row.mean_true_positive.to_string(),
            row.t.to_string(),
            row.df.to_string(),
            row.p_value.to_string(),
            row.bonferroni_p.to_string(),
            row.flagged.to_string(),
        ])?;
    }
    wtr.flush()?;

    let attributions = explain_cohort(&model, target)?;
    let case = fp_case_study(target, &scores, section.threshold, &attributions, section.top_k)?;
    let note = match &case {
        Some(c) => format!(
            "highest-scoring false positive: subject '{}' at score {:.4}",
            c.sample_id, c.score
        ),
        None => format!("no false-positive cases at threshold {}", section.threshold),
    };
    let case_file = FpCaseFile {
        threshold: section.threshold,
        note: note.clone(),
        case,
    };
    let case_path = out_dir.join("fp_waterfall.json");
    write_json(&case_path, &case_file)?;

    let mut manifest = ctx.manifest("errors");
    manifest.record_input(model_path)?;
    manifest.record_input(cohort_path)?;
    manifest.record_output(&report_path)?;
    manifest.record_output(&table_path)?;
    manifest.record_output(&case_path)?;

    if ctx.svg {
        if let Some(case) = &case_file.case {
            let mut contributions: Vec<f64> =
                case.waterfall.steps.iter().map(|s| s.phi).collect();
            contributions.push(case.waterfall.other);
            let case_svg = out_dir.join("fp_waterfall.svg");
            write_svg(
                &case_svg,
                &svg::waterfall_chart(
                    case.waterfall.base_value,
                    &contributions,
                    case.waterfall.final_margin,
                ),
            )?;
            manifest.record_output(&case_svg)?;
        }
    }
    let manifest_path = manifest.write(out_dir)?;

    let flagged = report.comparisons.iter().filter(|c| c.flagged).count();
    println!(
        "errors[{}]: {} false negatives vs {} true positives, {} of {} features flagged at alpha {}; {}",
        section.split,
        report.n_false_negatives,
        report.n_true_positives,
        flagged,
        report.comparisons.len(),
        section.alpha,
        note
    );
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

/// Boosted model and nearest-neighbour reference, side by side on the
/// same split and threshold.
#[derive(Debug, Serialize)]
struct ComparisonReport {
    threshold: f64,
    boosted: EvalReport,
    nearest_neighbour: EvalReport,
}

pub fn baseline(
    ctx: &Ctx,
    cohort_path: &Path,
    selection: Option<&Path>,
    model_path: Option<&Path>,
    out_dir: &Path,
) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let cohort = load_cohort(cohort_path)?;
    let (train, test) = stratified_split(&cohort, &ctx.split_spec())?;

    let mut manifest = ctx.manifest("baseline");
    manifest.record_input(cohort_path)?;
    let features = resolve_features(selection, &cohort, &mut manifest)?;

    let section = &ctx.config.baseline;
    let tuning = tune_k(
        &train,
        &features,
        &section.k_candidates,
        &section.config,
        section.cv_folds,
        section.seed,
    )?;
    let best = KnnConfig {
        k: tuning.best_k,
        ..section.config.clone()
    };
    let report = knn_evaluate(&train, &test, &features, &best, section.threshold)?;

    let eval_path = out_dir.join("knn_eval.json");
    write_json(&eval_path, &report)?;

    let tuning_path = out_dir.join("knn_tuning.csv");
    let mut wtr = csv_writer(&tuning_path)?;
    wtr.write_record(["k", "mean_cv_ap", "fold_aps"])?;
    for result in &tuning.results {
        let folds: Vec<String> = result.fold_scores.iter().map(|s| s.to_string()).collect();
        wtr.write_record([
            result.k.to_string(),
            result.mean_score.to_string(),
            folds.join(";"),
        ])?;
    }
    wtr.flush()?;

    manifest.record_output(&eval_path)?;
    manifest.record_output(&tuning_path)?;

    let mut boosted_auc = None;
    if let Some(model_path) = model_path {
        let model = load_boosted(model_path)?;
        manifest.record_input(model_path)?;
        let scores = model.predict_probs(&test)?;
        let boosted = summarize(&scores, test.labels(), section.threshold)?;
        boosted_auc = Some(boosted.auc_roc);
        let comparison = ComparisonReport {
            threshold: section.threshold,
            boosted,
            nearest_neighbour: report.clone(),
        };
        let comparison_path = out_dir.join("comparison.json");
        write_json(&comparison_path, &comparison)?;
        manifest.record_output(&comparison_path)?;
    }
    let manifest_path = manifest.write(out_dir)?;

    match boosted_auc {
        Some(auc) => println!(
            "baseline: k={} ROC AUC {:.4} vs boosted {:.4} on the test split",
            tuning.best_k, report.auc_roc, auc
        ),
        None => println!(
            "baseline: k={} ROC AUC {:.4}, AP {:.4} on the test split",
            tuning.best_k, report.auc_roc, report.auc_pr
        ),
    }
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// run-all
// ---------------------------------------------------------------------------

/// Execute every stage in order inside `out_dir`, then verify each
/// stage manifest and write an aggregate manifest over everything.
pub fn run_all(ctx: &Ctx, out_dir: &Path) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let cohort_path = out_dir.join("cohort.csv");
    let selection_path = out_dir.join("selection.json");
    let model_path = out_dir.join("model.json");

    let stage_manifests = vec![
        simulate(ctx, &cohort_path)?,
        select(ctx, &cohort_path, out_dir)?,
        train(ctx, &cohort_path, Some(&selection_path), out_dir)?,
        evaluate(ctx, &model_path, &cohort_path, out_dir)?,
        explain(ctx, &model_path, &cohort_path, out_dir)?,
        errors(ctx, &model_path, &cohort_path, out_dir)?,
        baseline(
            ctx,
            &cohort_path,
            Some(&selection_path),
            Some(&model_path),
            out_dir,
        )?,
    ];

    let mut master = ctx.manifest("run-all");
    let mut verified = 0usize;
    for path in &stage_manifests {
        let stage = verify_manifest(path)
            .with_context(|| format!("verifying stage manifest '{}'", path.display()))?;
        verified += stage.outputs.len();
        master.outputs.extend(stage.outputs);
        master.record_output(path)?;
    }
    let manifest_path = master.write(out_dir)?;

    println!(
        "run-all: {} stages complete, {} artifacts verified -> {}",
        stage_manifests.len(),
        verified,
        manifest_path.display()
    );
    Ok(manifest_path)
}
