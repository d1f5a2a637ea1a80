//! One JSON configuration file drives every subcommand. Each stage has
//! its own section; every field has a default, so an empty object (or
//! no config file at all) is a complete, runnable configuration.
//!
//! Seeds: `seed` at the top level is the master seed and drives cohort
//! simulation. It is resolved with the precedence `--seed` flag >
//! `RISKBOOST_SEED` environment variable > config file. Stages whose
//! randomness must stay aligned across commands (the train/test split,
//! cross-validation folds) carry their own explicit seeds with fixed
//! defaults, so re-running any subcommand reproduces the same
//! partitions byte for byte.

use std::fs::File;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use riskboost_core::{Grid, KnnConfig, SimConfig, TrainConfig, DEFAULT_K_CANDIDATES};

/// Which rows of the cohort a scoring stage operates on. Every stage
/// recomputes the same deterministic split from the `split` section,
/// so "train" and "test" mean the same rows in every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

impl std::fmt::Display for SplitChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitChoice::Train => "train",
            SplitChoice::Test => "test",
            SplitChoice::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; drives cohort simulation.
    pub seed: u64,
    /// Worker threads; 0 means all available cores. Results are
    /// worker-count-invariant by construction.
    pub workers: usize,
    pub simulate: SimConfig,
    pub split: SplitSection,
    pub select: SelectSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub explain: ExplainSection,
    pub errors: ErrorsSection,
    pub baseline: BaselineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: SimConfig::default().seed,
            workers: 0,
            simulate: SimConfig::default(),
            split: SplitSection::default(),
            select: SelectSection::default(),
            train: TrainSection::default(),
            evaluate: EvaluateSection::default(),
            explain: ExplainSection::default(),
            errors: ErrorsSection::default(),
            baseline: BaselineSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub dominance_threshold: f64,
    pub correlation_threshold: f64,
    pub cv_folds: usize,
    pub seed: u64,
    /// Configuration of the models fitted while scoring feature
    /// prefixes; smaller than the final training grid on purpose.
    pub train_config: TrainConfig,
}

impl Default for SelectSection {
    fn default() -> Self {
        let params = riskboost_core::SelectionParams::default();
        SelectSection {
            dominance_threshold: params.dominance_threshold,
            correlation_threshold: params.correlation_threshold,
            cv_folds: params.cv_folds,
            seed: params.seed,
            train_config: params.train_config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub grid: Grid,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            grid: Grid::default(),
            cv_folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub threshold: f64,
    pub split: SplitChoice,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            threshold: 0.5,
            split: SplitChoice::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// How many top features the figure data keeps.
    pub top_k: usize,
    pub split: SplitChoice,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            top_k: riskboost_core::DEFAULT_TOP_K,
            split: SplitChoice::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorsSection {
    pub threshold: f64,
    pub alpha: f64,
    /// How many features the false-positive waterfall keeps.
    pub top_k: usize,
    pub split: SplitChoice,
}

impl Default for ErrorsSection {
    fn default() -> Self {
        ErrorsSection {
            threshold: 0.5,
            alpha: riskboost_core::DEFAULT_ALPHA,
            top_k: riskboost_core::DEFAULT_TOP_K,
            split: SplitChoice::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Metric/weighting template; `k` is replaced by the tuned value.
    pub config: KnnConfig,
    pub k_candidates: Vec<usize>,
    pub cv_folds: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            config: KnnConfig::default(),
            k_candidates: DEFAULT_K_CANDIDATES.to_vec(),
            cv_folds: 5,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl RunConfig {
    /// Load from a JSON file, or return the defaults when no path is
    /// given. Unknown keys are rejected so typos fail loudly.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let file = File::open(p)
                    .with_context(|| format!("opening config file '{}'", p.display()))?;
                let config: RunConfig = serde_json::from_reader(file)
                    .with_context(|| format!("parsing config file '{}'", p.display()))?;
                Ok(config)
            }
        }
    }

    /// Apply the seed precedence: flag > `RISKBOOST_SEED` > config.
    pub fn resolve_seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        if let Some(seed) = flag {
            return Ok(seed);
        }
        match std::env::var("RISKBOOST_SEED") {
            Ok(raw) => raw
                .parse::<u64>()
                .with_context(|| format!("RISKBOOST_SEED='{raw}' is not a valid seed")),
            Err(_) => Ok(self.seed),
        }
    }
}
