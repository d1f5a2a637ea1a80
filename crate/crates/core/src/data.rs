//! Cohort container, CSV ingestion, stratified splitting, and synthetic
//! cohort generation.
//!
//! A cohort is a dense table of per-subject probability features in
//! `[0, 1]` plus a binary outcome label. The on-disk format is plain CSV:
//!
//! ```text
//! subject_id,label,Feature1,Feature2,...
//! S000001,0,0.1034,0.0021,...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write → load → write cycle is byte-identical. All randomized
//! operations take explicit seeds and use a fixed-algorithm generator
//! ([`ChaCha8Rng`]), so results are reproducible across platforms and
//! thread counts.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean shift added to risk features for event subjects in simulated
/// cohorts. Chosen to be large relative to the default noise scale so a
/// correctly implemented pipeline recovers the planted signal easily.
const RISK_SHIFT: f64 = 0.30;

/// Mean shift added to protective features for non-event subjects:
/// higher values then associate with *lower* risk.
const PROTECTIVE_SHIFT: f64 = 0.30;

/// Noise on a duplicated column, as a fraction of `noise_scale`. At 0.2
/// the expected Pearson correlation with the source column is
/// 1/sqrt(1 + 0.04) ≈ 0.98, comfortably above the 0.9 the generator
/// promises.
const DUPLICATE_JITTER: f64 = 0.2;

/// Range the per-feature baseline means are drawn from.
const BASELINE_MEAN_RANGE: (f64, f64) = (0.10, 0.60);

/// How many times label generation may redraw before giving up.
const MAX_LABEL_ATTEMPTS: usize = 1_000;

/// A dense cohort: one row per subject, one column per feature.
///
/// Invariants (enforced at construction):
/// * at least one subject and one feature;
/// * subject ids unique and non-empty;
/// * labels in {0, 1};
/// * every feature value finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subject_ids: Vec<String>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    /// Row-major values, stride = `feature_names.len()`.
    values: Vec<f64>,
}

impl Cohort {
    /// Build a cohort from parts, validating every invariant.
    pub fn from_parts(
        subject_ids: Vec<String>,
        labels: Vec<u8>,
        feature_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        let m = feature_names.len();
        if n == 0 {
            return Err(Error::Ingestion {
                row: 1,
                column: None,
                reason: "cohort has no subjects".into(),
            });
        }
        if m == 0 {
            return Err(Error::Ingestion {
                row: 0,
                column: None,
                reason: "cohort has no feature columns".into(),
            });
        }
        if labels.len() != n || values.len() != n * m {
            return Err(Error::Ingestion {
                row: 1,
                column: None,
                reason: format!(
                    "shape mismatch: {} ids, {} labels, {} values for {} features",
                    n,
                    labels.len(),
                    values.len(),
                    m
                ),
            });
        }
        let mut seen = HashSet::with_capacity(n);
        for (i, id) in subject_ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::Ingestion {
                    row: i + 1,
                    column: Some("subject_id".into()),
                    reason: "empty subject id".into(),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Ingestion {
                    row: i + 1,
                    column: Some("subject_id".into()),
                    reason: format!("duplicate subject id '{id}'"),
                });
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            if y > 1 {
                return Err(Error::Ingestion {
                    row: i + 1,
                    column: Some("label".into()),
                    reason: format!("label {y} not in {{0, 1}}"),
                });
            }
        }
        for (idx, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Ingestion {
                    row: idx / m + 1,
                    column: Some(feature_names[idx % m].clone()),
                    reason: format!("value {v} outside [0, 1]"),
                });
            }
        }
        Ok(Cohort {
            subject_ids,
            labels,
            feature_names,
            values,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// The feature row for one subject.
    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_features();
        &self.values[i * m..(i + 1) * m]
    }

    /// One feature value.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_features() + j]
    }

    /// A copy of one feature column.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_subjects()).map(|i| self.value(i, j)).collect()
    }

    /// Overwrite one feature column (used to craft cohorts in tests and
    /// simulations). Values must satisfy the cohort invariants.
    pub fn set_column(&mut self, j: usize, column: &[f64]) -> Result<()> {
        if j >= self.n_features() {
            return Err(Error::Contract(format!(
                "set_column: feature index {j} out of range for {} features",
                self.n_features()
            )));
        }
        if column.len() != self.n_subjects() {
            return Err(Error::Contract(format!(
                "set_column: got {} values for {} subjects",
                column.len(),
                self.n_subjects()
            )));
        }
        for &v in column {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Contract(format!(
                    "set_column: value {v} outside [0, 1]"
                )));
            }
        }
        let m = self.n_features();
        for (i, &v) in column.iter().enumerate() {
            self.values[i * m + j] = v;
        }
        Ok(())
    }

    /// Fraction of subjects with label 1.
    pub fn prevalence(&self) -> f64 {
        let pos: usize = self.labels.iter().map(|&y| y as usize).sum();
        pos as f64 / self.n_subjects() as f64
    }

    /// (negatives, positives) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos: usize = self.labels.iter().map(|&y| y as usize).sum();
        (self.n_subjects() - pos, pos)
    }

    /// A new cohort containing the given rows, in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let m = self.n_features();
        let mut ids = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * m);
        for &i in rows {
            if i >= self.n_subjects() {
                return Err(Error::Contract(format!(
                    "subset_rows: row {i} out of range for {} subjects",
                    self.n_subjects()
                )));
            }
            ids.push(self.subject_ids[i].clone());
            labels.push(self.labels[i]);
            values.extend_from_slice(self.row(i));
        }
        Cohort::from_parts(ids, labels, self.feature_names.clone(), values)
    }

    /// Returns a copy with labels replaced by a seeded permutation of
    /// themselves — the standard negative control for signal leakage.
    pub fn with_permuted_labels(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = self.labels.clone();
        labels.shuffle(&mut rng);
        Cohort {
            labels,
            ..self.clone()
        }
    }
}

/// How to split a cohort into train and test portions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of each class routed to the test set, strictly in (0, 1).
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Per-class test-set size: `count × fraction` rounded half-up, then
/// clamped so both sides of the split keep at least one member.
fn stratified_test_count(class_count: usize, test_fraction: f64) -> usize {
    let rounded = (class_count as f64 * test_fraction + 0.5).floor() as usize;
    rounded.clamp(1, class_count - 1)
}

/// Split a cohort into (train, test) preserving class balance.
///
/// Each class is shuffled with a generator seeded from `spec.seed` and
/// its first `round_half_up(count × test_fraction)` members go to the
/// test set. Within each output cohort the original row order is kept.
/// Both classes must have at least two members so that each side of the
/// split is non-degenerate.
pub fn stratified_split(cohort: &Cohort, spec: &SplitSpec) -> Result<(Cohort, Cohort)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test_fraction {} must be strictly between 0 and 1",
            spec.test_fraction
        )));
    }
    let (neg, pos) = cohort.class_counts();
    if neg < 2 || pos < 2 {
        return Err(Error::Split(format!(
            "each class needs at least 2 members to split, got {neg} negatives / {pos} positives"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut test_rows = Vec::new();
    let mut train_rows = Vec::new();
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..cohort.n_subjects())
            .filter(|&i| cohort.labels[i] == class)
            .collect();
        members.shuffle(&mut rng);
        let n_test = stratified_test_count(members.len(), spec.test_fraction);
        test_rows.extend_from_slice(&members[..n_test]);
        train_rows.extend_from_slice(&members[n_test..]);
    }
    test_rows.sort_unstable();
    train_rows.sort_unstable();
    Ok((
        cohort.subset_rows(&train_rows)?,
        cohort.subset_rows(&test_rows)?,
    ))
}

/// Configuration for [`simulate_cohort`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub n_features: usize,
    /// Expected fraction of event (label 1) subjects, in (0, 1).
    pub prevalence: f64,
    pub seed: u64,
    /// Standard deviation of the per-value Gaussian noise.
    pub noise_scale: f64,
    /// Feature indices whose values are shifted up for event subjects.
    pub risk_features: Vec<usize>,
    /// Feature indices whose values are shifted up for non-event
    /// subjects (so high values associate with lower risk).
    pub protective_features: Vec<usize>,
    /// `(source, copy)` pairs: the copy column is overwritten with a
    /// lightly jittered duplicate of the source column.
    pub duplicate_pairs: Vec<(usize, usize)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_subjects: 6_634,
            n_features: 150,
            prevalence: 0.0264,
            seed: 7,
            noise_scale: 0.15,
            risk_features: vec![10, 47, 105],
            protective_features: vec![22, 131],
            duplicate_pairs: Vec::new(),
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_features == 0 {
            return Err(Error::Simulation(
                "n_subjects and n_features must be positive".into(),
            ));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Simulation(format!(
                "prevalence {} must be strictly between 0 and 1",
                self.prevalence
            )));
        }
        if self.prevalence * (self.n_subjects as f64) < 5.0 {
            return Err(Error::Simulation(format!(
                "expected event count {:.2} is below 5; increase n_subjects or prevalence",
                self.prevalence * self.n_subjects as f64
            )));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::Simulation(format!(
                "noise_scale {} must be finite and non-negative",
                self.noise_scale
            )));
        }
        let mut planted: HashSet<usize> = HashSet::new();
        let mut check_new = |idx: usize, role: &str| -> Result<()> {
            if idx >= self.n_features {
                return Err(Error::Simulation(format!(
                    "{role} feature index {idx} out of range for {} features",
                    self.n_features
                )));
            }
            if !planted.insert(idx) {
                return Err(Error::Simulation(format!(
                    "feature index {idx} appears in more than one planted role"
                )));
            }
            Ok(())
        };
        for &j in &self.risk_features {
            check_new(j, "risk")?;
        }
        for &j in &self.protective_features {
            check_new(j, "protective")?;
        }
        for &(src, dst) in &self.duplicate_pairs {
            if src == dst {
                return Err(Error::Simulation(format!(
                    "duplicate pair ({src}, {dst}) must reference two distinct features"
                )));
            }
            check_new(src, "duplicate source")?;
            check_new(dst, "duplicate copy")?;
        }
        Ok(())
    }
}

/// One standard-normal draw via Box–Muller. Implemented locally so the
/// exact byte stream of a simulation depends only on this crate and the
/// pinned generator, not on distribution crates.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // in (0, 1], keeps ln finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate a synthetic cohort with known planted structure.
///
/// * Labels are i.i.d. Bernoulli(`prevalence`), redrawn until the event
///   count lands within three standard errors of its expectation (and
///   both classes have at least two members).
/// * Each feature gets a baseline mean drawn uniformly from
///   [0.10, 0.60]; values are that mean plus Gaussian noise of standard
///   deviation `noise_scale`, clamped to `[0, 1]`.
/// * Risk features are shifted up by 0.30 for event subjects;
///   protective features are shifted up by 0.30 for non-event subjects.
/// * Each `(source, copy)` duplicate pair overwrites the copy column
///   with source + Gaussian jitter of sd `0.2 × noise_scale`, giving a
///   Pearson correlation above 0.9 by construction.
///
/// With `noise_scale = 0` and no planted features every column is a
/// constant, i.e. identically distributed across classes.
pub fn simulate_cohort(config: &SimConfig) -> Result<Cohort> {
    config.validate()?;
    let n = config.n_subjects;
    let m = config.n_features;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Per-feature baseline means, drawn in feature order.
    let (lo, hi) = BASELINE_MEAN_RANGE;
    let means: Vec<f64> = (0..m).map(|_| rng.gen_range(lo..hi)).collect();

    // Labels: redraw whole vectors until the event count is plausible.
    let expected = config.prevalence * n as f64;
    let se = (n as f64 * config.prevalence * (1.0 - config.prevalence)).sqrt();
    let mut labels: Vec<u8> = Vec::new();
    let mut accepted = false;
    for _ in 0..MAX_LABEL_ATTEMPTS {
        labels = (0..n)
            .map(|_| u8::from(rng.gen::<f64>() < config.prevalence))
            .collect();
        let events: usize = labels.iter().map(|&y| y as usize).sum();
        let within = (events as f64 - expected).abs() <= 3.0 * se;
        if within && events >= 2 && n - events >= 2 {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::Simulation(format!(
            "could not draw a label vector with ~{expected:.1} events in {MAX_LABEL_ATTEMPTS} attempts"
        )));
    }

    let risk: HashSet<usize> = config.risk_features.iter().copied().collect();
    let protective: HashSet<usize> = config.protective_features.iter().copied().collect();

    // Values, drawn row-major.
    let mut values = vec![0.0f64; n * m];
    for i in 0..n {
        let y = labels[i];
        for j in 0..m {
            let mut v = means[j] + config.noise_scale * standard_normal(&mut rng);
            if y == 1 && risk.contains(&j) {
                v += RISK_SHIFT;
            }
            if y == 0 && protective.contains(&j) {
                v += PROTECTIVE_SHIFT;
            }
            values[i * m + j] = v.clamp(0.0, 1.0);
        }
    }

    // Duplicate columns last, in pair order.
    for &(src, dst) in &config.duplicate_pairs {
        for i in 0..n {
            let jitter = DUPLICATE_JITTER * config.noise_scale * standard_normal(&mut rng);
            values[i * m + dst] = (values[i * m + src] + jitter).clamp(0.0, 1.0);
        }
    }

    let subject_ids = (1..=n).map(|i| format!("S{i:06}")).collect();
    let feature_names = (1..=m).map(|j| format!("Feature{j}")).collect();
    Cohort::from_parts(subject_ids, labels, feature_names, values)
}

/// Load a cohort from CSV. The header must be
/// `subject_id,label,<feature names...>`; when `expected_features` is
/// given, the file must have exactly that many feature columns. Errors
/// name the offending row (1-based data rows, header = row 0) and
/// column.
pub fn load_cohort<P: AsRef<Path>>(path: P, expected_features: Option<usize>) -> Result<Cohort> {
    let file = std::fs::File::open(path.as_ref())?;
    load_cohort_from(file, expected_features)
}

/// Same as [`load_cohort`] but from any reader (handy in tests).
pub fn load_cohort_from<R: Read>(reader: R, expected_features: Option<usize>) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion {
            row: 0,
            column: None,
            reason: format!("could not read header: {e}"),
        })?
        .clone();
    if headers.len() < 3 || &headers[0] != "subject_id" || &headers[1] != "label" {
        return Err(Error::Ingestion {
            row: 0,
            column: None,
            reason: "header must be 'subject_id,label,<feature columns...>'".into(),
        });
    }
    let feature_names: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    if let Some(expected) = expected_features {
        if feature_names.len() != expected {
            return Err(Error::Ingestion {
                row: 0,
                column: None,
                reason: format!(
                    "expected {expected} feature columns, found {}",
                    feature_names.len()
                ),
            });
        }
    }

    let m = feature_names.len();
    let mut subject_ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Ingestion {
            row,
            column: None,
            reason: format!("unreadable record: {e}"),
        })?;
        if record.len() != m + 2 {
            return Err(Error::Ingestion {
                row,
                column: None,
                reason: format!("expected {} fields, found {}", m + 2, record.len()),
            });
        }
        subject_ids.push(record[0].to_owned());
        labels.push(match &record[1] {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Ingestion {
                    row,
                    column: Some("label".into()),
                    reason: format!("label '{other}' not in {{0, 1}}"),
                })
            }
        });
        for (j, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                row,
                column: Some(feature_names[j].clone()),
                reason: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Ingestion {
                    row,
                    column: Some(feature_names[j].clone()),
                    reason: format!("value {field} outside [0, 1]"),
                });
            }
            values.push(v);
        }
    }
    Cohort::from_parts(subject_ids, labels, feature_names, values)
}

/// Write a cohort as CSV. Values use shortest round-trip float
/// formatting, so loading the file reproduces the cohort bit-for-bit.
pub fn write_cohort<P: AsRef<Path>>(cohort: &Cohort, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_cohort_to(cohort, file)
}

/// Same as [`write_cohort`] but to any writer.
pub fn write_cohort_to<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_owned(), "label".to_owned()];
    header.extend(cohort.feature_names().iter().cloned());
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(cohort.n_features() + 2);
    for i in 0..cohort.n_subjects() {
        record.clear();
        record.push(cohort.subject_ids()[i].clone());
        record.push(cohort.labels()[i].to_string());
        for &v in cohort.row(i) {
            record.push(format!("{v}"));
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}
