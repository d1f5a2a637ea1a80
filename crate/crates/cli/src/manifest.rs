//! Every subcommand leaves a manifest next to its outputs: what ran,
//! with which effective configuration and seed, reading and writing
//! which files, with SHA-256 digests so any later consumer can verify
//! the artifacts it is about to trust.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// A file the run read or wrote, with its digest at manifest time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub created_utc: String,
    pub seed: u64,
    pub workers: usize,
    /// The effective configuration (file + flag overrides applied).
    pub config: RunConfig,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, seed: u64, workers: usize) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            created_utc: utc_timestamp(),
            seed,
            workers,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(artifact_ref(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push(artifact_ref(path)?);
        Ok(())
    }

    /// Write the manifest as `<stage>.manifest.json` inside `dir` and
    /// return the path written.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        let mut file = File::create(&path)
            .with_context(|| format!("creating manifest '{}'", path.display()))?;
        serde_json::to_writer_pretty(&mut file, self)
            .with_context(|| format!("writing manifest '{}'", path.display()))?;
        file.write_all(b"\n")?;
        Ok(path)
    }
}

fn artifact_ref(path: &Path) -> anyhow::Result<ArtifactRef> {
    let bytes = std::fs::metadata(path)
        .with_context(|| format!("artifact '{}' must exist when recorded", path.display()))?
        .len();
    Ok(ArtifactRef {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
        bytes,
    })
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let file =
        File::open(path).with_context(|| format!("hashing artifact '{}'", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buffer = [0u8; 64 * 1024];
    loop {
        let read = reader.read(&mut buffer)?;
        if read == 0 {
            break;
        }
        hasher.update(&buffer[..read]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(digest: &[u8]) -> String {
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Re-read a manifest and re-hash every referenced artifact, failing
/// on the first missing file or digest mismatch.
pub fn verify_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let file =
        File::open(path).with_context(|| format!("opening manifest '{}'", path.display()))?;
    let manifest: RunManifest = serde_json::from_reader(file)
        .with_context(|| format!("parsing manifest '{}'", path.display()))?;
    for artifact in manifest.inputs.iter().chain(&manifest.outputs) {
        let current = sha256_file(Path::new(&artifact.path))?;
        anyhow::ensure!(
            current == artifact.sha256,
            "artifact '{}' changed since '{}' was written (sha256 {} != recorded {})",
            artifact.path,
            path.display(),
            current,
            artifact.sha256
        );
    }
    Ok(manifest)
}

fn utc_timestamp() -> String {
    let seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format_utc(seconds)
}

/// Render epoch seconds as an ISO-8601 UTC timestamp using the
/// civil-from-days calendar conversion.
fn format_utc(seconds: u64) -> String {
    let days = (seconds / 86_400) as i64;
    let rem = seconds % 86_400;
    let (hour, minute, second) = (rem / 3_600, rem % 3_600 / 60, rem % 60);

    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1_460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);

    format!("{year:04}-{month:02}-{day:02}T{hour:02}:{minute:02}:{second:02}Z")
}
