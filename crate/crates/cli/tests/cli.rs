//! Behavior tests for the binary: exit codes, determinism, flag
//! overrides, and the shape of every artifact each subcommand writes.
//! A small planted cohort plus a trained model are built once through
//! the binary itself and shared by all tests.

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_riskboost")
}

fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(binary()).args(args).output().expect("binary runs")
}

fn run_ok<I, S>(args: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let output = run(args);
    assert!(
        output.status.success(),
        "command failed:\n{}\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no exit code")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn json_of(path: &Path) -> serde_json::Value {
    let raw = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading '{}': {e}", path.display()));
    serde_json::from_str(&raw).unwrap_or_else(|e| panic!("parsing '{}': {e}", path.display()))
}

fn write_config(path: &Path) {
    let config = serde_json::json!({
        "seed": 3,
        "simulate": {
            "n_subjects": 600,
            "n_features": 18,
            "prevalence": 0.2,
            "risk_features": [2, 5],
            "protective_features": [9],
            "duplicate_pairs": [[3, 12]]
        },
        "select": {
            "cv_folds": 3,
            "train_config": {"n_trees": 20, "max_depth": 3, "learning_rate": 0.3}
        },
        "train": {
            "cv_folds": 3,
            "grid": {"n_trees": [30, 60], "max_depth": [3], "learning_rate": [0.3]}
        },
        "baseline": {"k_candidates": [3, 5, 7], "cv_folds": 3}
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

/// Cohort, selection report, and trained model produced through the
/// binary once, then shared read-only by every test.
struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    cohort: PathBuf,
    selection: PathBuf,
    model: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("config.json");
        write_config(&config);
        let cohort = dir.path().join("cohort.csv");
        run_ok([
            OsStr::new("--config"),
            config.as_os_str(),
            OsStr::new("simulate"),
            OsStr::new("--out"),
            cohort.as_os_str(),
        ]);
        run_ok([
            OsStr::new("--config"),
            config.as_os_str(),
            OsStr::new("select"),
            OsStr::new("--cohort"),
            cohort.as_os_str(),
            OsStr::new("--out-dir"),
            dir.path().as_os_str(),
        ]);
        run_ok([
            OsStr::new("--config"),
            config.as_os_str(),
            OsStr::new("train"),
            OsStr::new("--cohort"),
            cohort.as_os_str(),
            OsStr::new("--selection"),
            dir.path().join("selection.json").as_os_str(),
            OsStr::new("--out-dir"),
            dir.path().as_os_str(),
        ]);
        Fixture {
            config,
            cohort,
            selection: dir.path().join("selection.json"),
            model: dir.path().join("model.json"),
            _dir: dir,
        }
    })
}

fn evaluate_at(threshold: &str, split: Option<&str>, out_dir: &Path) -> serde_json::Value {
    let f = fixture();
    let mut args: Vec<&OsStr> = vec![
        OsStr::new("--config"),
        f.config.as_os_str(),
        OsStr::new("evaluate"),
        OsStr::new("--model"),
        f.model.as_os_str(),
        OsStr::new("--cohort"),
        f.cohort.as_os_str(),
        OsStr::new("--out-dir"),
        out_dir.as_os_str(),
        OsStr::new("--threshold"),
        OsStr::new(threshold),
    ];
    if let Some(s) = split {
        args.push(OsStr::new("--split"));
        args.push(OsStr::new(s));
    }
    run_ok(args);
    json_of(&out_dir.join("eval.json"))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[test]
fn simulate_with_a_repeated_seed_is_byte_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("again.csv");
    run_ok([
        OsStr::new("--config"),
        f.config.as_os_str(),
        OsStr::new("simulate"),
        OsStr::new("--out"),
        again.as_os_str(),
    ]);
    assert_eq!(
        std::fs::read(&f.cohort).unwrap(),
        std::fs::read(&again).unwrap(),
        "same seed must reproduce the cohort byte for byte"
    );
}

#[test]
fn seed_precedence_is_flag_then_env_then_config() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();

    let env_out = dir.path().join("env.csv");
    let output = Command::new(binary())
        .env("RISKBOOST_SEED", "99")
        .args(["--config"])
        .arg(&f.config)
        .args(["simulate", "--out"])
        .arg(&env_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_ne!(
        std::fs::read(&f.cohort).unwrap(),
        std::fs::read(&env_out).unwrap(),
        "RISKBOOST_SEED must override the config seed"
    );

    let flag_out = dir.path().join("flag.csv");
    let output = Command::new(binary())
        .env("RISKBOOST_SEED", "99")
        .args(["--config"])
        .arg(&f.config)
        .args(["--seed", "3", "simulate", "--out"])
        .arg(&flag_out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        std::fs::read(&f.cohort).unwrap(),
        std::fs::read(&flag_out).unwrap(),
        "--seed must beat RISKBOOST_SEED"
    );
}

#[test]
fn a_tiny_balanced_cohort_is_valid_output() {
    let dir = tempfile::tempdir().unwrap();
    // The default planted-feature indices assume a wide cohort, so a
    // narrow one needs them cleared before the width flags apply.
    let config = dir.path().join("narrow.json");
    std::fs::write(
        &config,
        r#"{"simulate": {"risk_features": [1], "protective_features": [], "duplicate_pairs": []}}"#,
    )
    .unwrap();
    let out = dir.path().join("tiny.csv");
    run_ok([
        OsStr::new("--config"),
        config.as_os_str(),
        OsStr::new("simulate"),
        OsStr::new("--out"),
        out.as_os_str(),
        OsStr::new("--n-subjects"),
        OsStr::new("40"),
        OsStr::new("--n-features"),
        OsStr::new("4"),
        OsStr::new("--prevalence"),
        OsStr::new("0.5"),
    ]);
    let raw = std::fs::read_to_string(&out).unwrap();
    assert_eq!(raw.lines().count(), 41, "header plus one line per subject");
}

#[test]
fn invalid_simulation_config_exits_2_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"simulate": {"prevalence": 1.5}}"#).unwrap();
    let output = run([
        OsStr::new("--config"),
        config.as_os_str(),
        OsStr::new("simulate"),
        OsStr::new("--out"),
        dir.path().join("x.csv").as_os_str(),
    ]);
    assert_eq!(exit_code(&output), 2);
    assert!(
        stderr_of(&output).contains("prevalence"),
        "stderr must name the bad field: {}",
        stderr_of(&output)
    );
}

#[test]
fn unknown_config_keys_exit_2_and_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("typo.json");
    std::fs::write(&config, r#"{"sede": 11}"#).unwrap();
    let output = run([
        OsStr::new("--config"),
        config.as_os_str(),
        OsStr::new("simulate"),
        OsStr::new("--out"),
        dir.path().join("x.csv").as_os_str(),
    ]);
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("sede"));
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[test]
fn select_prunes_the_planted_duplicate_pair() {
    let f = fixture();
    let report = json_of(&f.selection);
    let dropped = report["dropped_correlated"].as_array().unwrap();
    assert!(
        dropped.iter().any(|d| {
            let kept = d["kept"].as_u64().unwrap();
            let gone = d["dropped"].as_u64().unwrap();
            (kept == 3 && gone == 12) || (kept == 12 && gone == 3)
        }),
        "planted duplicate pair (3, 12) must be pruned, got {dropped:?}"
    );
    assert!(!report["selected"].as_array().unwrap().is_empty());
}

#[test]
fn select_on_an_empty_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let output = run([
        OsStr::new("select"),
        OsStr::new("--cohort"),
        empty.as_os_str(),
        OsStr::new("--out-dir"),
        dir.path().as_os_str(),
    ]);
    assert_eq!(exit_code(&output), 2);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[test]
fn train_with_a_singleton_grid_echoes_the_config() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("singleton.json");
    let body = serde_json::json!({
        "seed": 3,
        "train": {
            "cv_folds": 3,
            "grid": {
                "n_trees": [25],
                "max_depth": [2],
                "learning_rate": [0.3],
                "scale_pos_weight": [1.0]
            }
        }
    });
    std::fs::write(&config, body.to_string()).unwrap();
    run_ok([
        OsStr::new("--config"),
        config.as_os_str(),
        OsStr::new("train"),
        OsStr::new("--cohort"),
        f.cohort.as_os_str(),
        OsStr::new("--out-dir"),
        dir.path().as_os_str(),
    ]);
    let cv = json_of(&dir.path().join("cv_results.json"));
    assert_eq!(cv["results"].as_array().unwrap().len(), 1);
    assert_eq!(cv["best"]["config"]["n_trees"], 25);
    assert_eq!(cv["best"]["config"]["max_depth"], 2);
    let model = json_of(&dir.path().join("model.json"));
    assert_eq!(model["config"]["n_trees"], 25);
    assert_eq!(model["trees"].as_array().unwrap().len(), 25);
}

#[test]
fn train_rerun_with_the_same_seed_is_byte_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    run_ok([
        OsStr::new("--config"),
        f.config.as_os_str(),
        OsStr::new("train"),
        OsStr::new("--cohort"),
        f.cohort.as_os_str(),
        OsStr::new("--selection"),
        f.selection.as_os_str(),
        OsStr::new("--out-dir"),
        dir.path().as_os_str(),
    ]);
    assert_eq!(
        std::fs::read(&f.model).unwrap(),
        std::fs::read(dir.path().join("model.json")).unwrap(),
        "same cohort, selection, and seed must reproduce the model byte for byte"
    );
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[test]
fn raising_the_threshold_shrinks_predicted_positives_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let mut last_tp = u64::MAX;
    let mut last_fp = u64::MAX;
    for (i, threshold) in ["0.1", "0.5", "0.9"].iter().enumerate() {
        let report = evaluate_at(threshold, None, &dir.path().join(i.to_string()));
        let tp = report["confusion"]["true_positives"].as_u64().unwrap();
        let fp = report["confusion"]["false_positives"].as_u64().unwrap();
        assert!(
            tp <= last_tp && fp <= last_fp,
            "confusion counts must shrink as the threshold rises: TP {last_tp}->{tp}, FP {last_fp}->{fp}"
        );
        last_tp = tp;
        last_fp = fp;
    }
}

#[test]
fn split_flag_selects_the_right_rows() {
    let dir = tempfile::tempdir().unwrap();
    let test = evaluate_at("0.5", Some("test"), &dir.path().join("test"));
    let train = evaluate_at("0.5", Some("train"), &dir.path().join("train"));
    let all = evaluate_at("0.5", Some("all"), &dir.path().join("all"));
    let total = |r: &serde_json::Value| {
        ["true_positives", "false_positives", "true_negatives", "false_negatives"]
            .iter()
            .map(|k| r["confusion"][k].as_u64().unwrap())
            .sum::<u64>()
    };
    assert_eq!(total(&test), 120, "test split holds 20% of 600 subjects");
    assert_eq!(total(&train), 480);
    assert_eq!(total(&all), 600);
}

#[test]
fn evaluate_with_a_missing_model_exits_2() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let output = run([
        OsStr::new("evaluate"),
        OsStr::new("--model"),
        dir.path().join("nope.json").as_os_str(),
        OsStr::new("--cohort"),
        f.cohort.as_os_str(),
        OsStr::new("--out-dir"),
        dir.path().as_os_str(),
    ]);
    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("nope.json"));
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

#[test]
fn explain_top_k_bounds_the_figure_data() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    run_ok([
        OsStr::new("--config"),
        f.config.as_os_str(),
        OsStr::new("explain"),
        OsStr::new("--model"),
        f.model.as_os_str(),
        OsStr::new("--cohort"),
        f.cohort.as_os_str(),
        OsStr::new("--out-dir"),
        dir.path().as_os_str(),
        OsStr::new("--top-k"),
        OsStr::new("3"),
    ]);

    let importance = std::fs::read_to_string(dir.path().join("importance.csv")).unwrap();
    assert_eq!(importance.lines().count(), 4, "header plus three rows");

    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut features: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    features.sort_unstable();
    features.dedup();
    assert_eq!(features.len(), 3, "summary data covers exactly top-k features");

    let attributions = json_of(&dir.path().join("attributions.json"));
    let phi = attributions["phi"].as_array().unwrap();
    assert_eq!(phi.len(), 120, "one attribution row per test-split subject");
    assert_eq!(
        phi[0].as_array().unwrap().len(),
        18,
        "every feature gets an attribution column"
    );
}

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

#[test]
fn errors_reports_every_feature_and_decomposes_the_top_false_positive() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    run_ok([
        OsStr::new("--config"),
        f.config.as_os_str(),
        OsStr::new("errors"),
        OsStr::new("--model"),
        f.model.as_os_str(),
        OsStr::new("--cohort"),
        f.cohort.as_os_str(),
        OsStr::new("--out-dir"),
        dir.path().as_os_str(),
    ]);

    let table = std::fs::read_to_string(dir.path().join("fn_vs_tp.csv")).unwrap();
    assert_eq!(
        table.lines().count(),
        19,
        "header plus one comparison row per feature"
    );

    let case = json_of(&dir.path().join("fp_waterfall.json"));
    assert!(case["case"].is_object(), "threshold 0.5 has a false positive");
    assert!(dir.path().join("fp_waterfall.svg").exists());
}

#[test]
fn errors_without_false_positives_writes_an_explicit_note() {
    // Find a threshold with zero false positives but enough true
    // positives and false negatives for the group comparison.
    let dir = tempfile::tempdir().unwrap();
    let mut chosen = None;
    for (i, threshold) in ["0.6", "0.7", "0.8", "0.88", "0.92"].iter().enumerate() {
        let report = evaluate_at(threshold, None, &dir.path().join(i.to_string()));
        let fp = report["confusion"]["false_positives"].as_u64().unwrap();
        let tp = report["confusion"]["true_positives"].as_u64().unwrap();
        let fn_ = report["confusion"]["false_negatives"].as_u64().unwrap();
        if fp == 0 && tp >= 2 && fn_ >= 2 {
            chosen = Some(*threshold);
            break;
        }
    }
    let threshold = chosen.expect("some threshold separates without false positives");

    let f = fixture();
    let out = dir.path().join("errors");
    run_ok([
        OsStr::new("--config"),
        f.config.as_os_str(),
        OsStr::new("errors"),
        OsStr::new("--model"),
        f.model.as_os_str(),
        OsStr::new("--cohort"),
        f.cohort.as_os_str(),
        OsStr::new("--out-dir"),
        out.as_os_str(),
        OsStr::new("--threshold"),
        OsStr::new(threshold),
    ]);
    let case = json_of(&out.join("fp_waterfall.json"));
    assert!(case["case"].is_null());
    assert!(
        case["note"].as_str().unwrap().contains("no false-positive"),
        "note must say there were no false positives: {}",
        case["note"]
    );
    assert!(!out.join("fp_waterfall.svg").exists());
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

#[test]
fn baseline_reruns_identically_and_writes_the_comparison() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    for out in [&first, &second] {
        run_ok([
            OsStr::new("--config"),
            f.config.as_os_str(),
            OsStr::new("baseline"),
            OsStr::new("--cohort"),
            f.cohort.as_os_str(),
            OsStr::new("--selection"),
            f.selection.as_os_str(),
            OsStr::new("--model"),
            f.model.as_os_str(),
            OsStr::new("--out-dir"),
            out.as_os_str(),
        ]);
    }
    assert_eq!(
        std::fs::read(first.join("knn_eval.json")).unwrap(),
        std::fs::read(second.join("knn_eval.json")).unwrap(),
        "identical seeds must give identical reports"
    );

    let comparison = json_of(&first.join("comparison.json"));
    assert!(comparison["boosted"]["auc_roc"].is_number());
    assert!(comparison["nearest_neighbour"]["auc_roc"].is_number());
}

// ---------------------------------------------------------------------------
// manifests
// ---------------------------------------------------------------------------

#[test]
fn every_stage_writes_a_manifest_whose_digests_verify() {
    let f = fixture();
    let manifest = json_of(&f.selection.parent().unwrap().join("train.manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 3);
    for artifact in manifest["outputs"].as_array().unwrap() {
        let path = PathBuf::from(artifact["path"].as_str().unwrap());
        assert!(path.exists(), "recorded artifact '{}' exists", path.display());
        let recorded = artifact["sha256"].as_str().unwrap();
        assert_eq!(recorded.len(), 64);
    }
}
