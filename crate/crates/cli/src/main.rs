//! `riskboost` — an interpretable risk-modeling pipeline over
//! probability features: simulate or ingest a cohort, select features,
//! tune and fit a boosted model, evaluate it, explain every
//! prediction, compare error groups, and benchmark a
//! nearest-neighbour reference — each stage reproducible from one
//! JSON config and one seed.

mod config;
mod manifest;
mod stages;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, SplitChoice};
use stages::Ctx;

#[derive(Parser)]
#[command(
    name = "riskboost",
    version,
    about = "Interpretable boosted risk modeling on probability features"
)]
struct Cli {
    /// JSON run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed. Highest precedence, ahead of the RISKBOOST_SEED
    /// environment variable and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all available cores). Results never depend
    /// on this value.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Skip SVG figures; CSV figure data is always written.
    #[arg(long, global = true)]
    no_svg: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SplitArgs {
    /// Which rows to score: the train split, the held-out test split,
    /// or the whole cohort.
    #[arg(long, value_enum)]
    split: Option<SplitChoice>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV with planted structure.
    Simulate {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_subjects: Option<usize>,
        #[arg(long)]
        n_features: Option<usize>,
        #[arg(long)]
        prevalence: Option<f64>,
    },
    /// Run three-stage feature selection on the training split.
    Select {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Cross-validation folds for the forward-selection scores.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        dominance_threshold: Option<f64>,
        #[arg(long)]
        correlation_threshold: Option<f64>,
    },
    /// Grid-search hyperparameters and fit the boosted model.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        /// Selection report restricting the feature set; omit to train
        /// on every feature.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Cross-validation folds for the grid search.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Score a split and write the evaluation report and curves.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Decision threshold on the predicted probability.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Attribute every prediction and write figure data.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// How many top features the figure data keeps.
        #[arg(long)]
        top_k: Option<usize>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Compare missed vs caught outcomes and decompose the worst
    /// false positive.
    Errors {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Decision threshold on the predicted probability.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Tune and evaluate the nearest-neighbour reference model.
    Baseline {
        #[arg(long)]
        cohort: PathBuf,
        /// Selection report restricting the feature set.
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Boosted model to place alongside in a comparison report.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run every stage in order from one config.
    RunAll {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let contract = err
                .downcast_ref::<riskboost_core::Error>()
                .is_some_and(riskboost_core::Error::is_contract_violation);
            ExitCode::from(if contract { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    apply_overrides(&mut config, &cli.command);

    let seed = config.resolve_seed(cli.seed)?;
    let workers = cli.workers.unwrap_or(config.workers);
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("initializing the worker pool")?;
    }
    let ctx = Ctx {
        config,
        seed,
        workers,
        svg: !cli.no_svg,
    };

    match &cli.command {
        Command::Simulate { out, .. } => stages::simulate(&ctx, out)?,
        Command::Select {
            cohort, out_dir, ..
        } => stages::select(&ctx, cohort, out_dir)?,
        Command::Train {
            cohort,
            selection,
            out_dir,
            ..
        } => stages::train(&ctx, cohort, selection.as_deref(), out_dir)?,
        Command::Evaluate {
            model,
            cohort,
            out_dir,
            ..
        } => stages::evaluate(&ctx, model, cohort, out_dir)?,
        Command::Explain {
            model,
            cohort,
            out_dir,
            ..
        } => stages::explain(&ctx, model, cohort, out_dir)?,
        Command::Errors {
            model,
            cohort,
            out_dir,
            ..
        } => stages::errors(&ctx, model, cohort, out_dir)?,
        Command::Baseline {
            cohort,
            selection,
            model,
            out_dir,
        } => stages::baseline(&ctx, cohort, selection.as_deref(), model.as_deref(), out_dir)?,
        Command::RunAll { out_dir } => stages::run_all(&ctx, out_dir)?,
    };
    Ok(())
}

/// Per-stage flags override the matching config section.
fn apply_overrides(config: &mut RunConfig, command: &Command) {
    match command {
        Command::Simulate {
            n_subjects,
            n_features,
            prevalence,
            ..
        } => {
            if let Some(n) = n_subjects {
                config.simulate.n_subjects = *n;
            }
            if let Some(m) = n_features {
                config.simulate.n_features = *m;
            }
            if let Some(p) = prevalence {
                config.simulate.prevalence = *p;
            }
        }
        Command::Select {
            folds,
            dominance_threshold,
            correlation_threshold,
            ..
        } => {
            if let Some(k) = folds {
                config.select.cv_folds = *k;
            }
            if let Some(t) = dominance_threshold {
                config.select.dominance_threshold = *t;
            }
            if let Some(t) = correlation_threshold {
                config.select.correlation_threshold = *t;
            }
        }
        Command::Train { folds, .. } => {
            if let Some(k) = folds {
                config.train.cv_folds = *k;
            }
        }
        Command::Evaluate {
            threshold, split, ..
        } => {
            if let Some(t) = threshold {
                config.evaluate.threshold = *t;
            }
            if let Some(s) = split.split {
                config.evaluate.split = s;
            }
        }
        Command::Explain { top_k, split, .. } => {
            if let Some(k) = top_k {
                config.explain.top_k = *k;
            }
            if let Some(s) = split.split {
                config.explain.split = s;
            }
        }
        Command::Errors {
            threshold, split, ..
        } => {
            if let Some(t) = threshold {
                config.errors.threshold = *t;
            }
            if let Some(s) = split.split {
                config.errors.split = s;
            }
        }
        Command::Baseline { .. } | Command::RunAll { .. } => {}
    }
}
