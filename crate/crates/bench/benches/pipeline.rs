//! Benchmarks for the pipeline's hot paths: boosting, exact
//! attribution, ranking metrics, and the two-sample test.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use riskboost_bench::{bench_cohort, paired_groups, scored_sample};
use riskboost_core::{auc_roc, explain_cohort, fit, welch_t_test, TrainConfig};

fn boosted_fit(c: &mut Criterion) {
    let cohort = bench_cohort();
    let features: Vec<usize> = (0..cohort.n_features()).collect();
    let config = TrainConfig {
        n_trees: 40,
        max_depth: 3,
        learning_rate: 0.3,
        ..TrainConfig::default()
    };
    c.bench_function("fit_40_trees_1500x20", |b| {
        b.iter(|| fit(&cohort, &features, &config).unwrap())
    });
}

fn exact_attribution(c: &mut Criterion) {
    let cohort = bench_cohort();
    let features: Vec<usize> = (0..cohort.n_features()).collect();
    let config = TrainConfig {
        n_trees: 40,
        max_depth: 3,
        learning_rate: 0.3,
        ..TrainConfig::default()
    };
    let model = fit(&cohort, &features, &config).unwrap();
    c.bench_function("tree_shap_cohort_1500x20", |b| {
        b.iter(|| explain_cohort(&model, &cohort).unwrap())
    });
}

fn ranking_metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("auc_roc");
    for n in [1_000usize, 100_000] {
        let (scores, labels) = scored_sample(n, 11);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| auc_roc(&scores, &labels).unwrap())
        });
    }
    group.finish();
}

fn two_sample_test(c: &mut Criterion) {
    let (a, bp) = paired_groups(5_000, 4_000, 17);
    c.bench_function("welch_t_test_5000v4000", |b| {
        b.iter(|| welch_t_test(&a, &bp).unwrap())
    });
}

criterion_group!(
    benches,
    boosted_fit,
    exact_attribution,
    ranking_metrics,
    two_sample_test
);
criterion_main!(benches);
