//! Run manifests: what was run, on which inputs, with which seeds, and
//! digests of everything it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};
use crate::results::{write_json, RESULTS_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "epiphase-manifest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| AppError::Read {
        path: path.into(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    /// Subcommand name.
    pub command: String,
    /// The parsed command with absolute paths.
    pub invocation: serde_json::Value,
    /// Configuration text as read, so the run can be repeated without the file.
    pub config: Option<String>,
    pub rng_seed: Option<u64>,
    /// Random stream of each chain under `rng_seed`.
    pub chain_streams: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    /// Files written by the run, relative to the output directory.
    pub artifacts: Vec<FileDigest>,
    pub started_at: String,
    pub wall_clock_seconds: f64,
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn start<T: Serialize>(command: &str, invocation: &T) -> Self {
        Self {
            manifest: RunManifest {
                format: MANIFEST_FORMAT.into(),
                version: RESULTS_VERSION,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                invocation: serde_json::to_value(invocation).expect("invocation serialises"),
                config: None,
                rng_seed: None,
                chain_streams: Vec::new(),
                inputs: Vec::new(),
                artifacts: Vec::new(),
                started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
                wall_clock_seconds: 0.0,
            },
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, text: &str) -> &mut Self {
        self.manifest.config = Some(text.to_string());
        self
    }

    pub fn seeds(&mut self, seed: u64, chains: usize) -> &mut Self {
        self.manifest.rng_seed = Some(seed);
        self.manifest.chain_streams = (0..chains as u64).collect();
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.manifest.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    /// Finishes the manifest with digests of `artifacts` and writes it into `out_dir`.
    pub fn finish(mut self, out_dir: &Path, artifacts: &[PathBuf]) -> Result<RunManifest> {
        let mut digests = Vec::with_capacity(artifacts.len());
        for a in artifacts {
            let rel = a.strip_prefix(out_dir).unwrap_or(a).to_path_buf();
            digests.push(FileDigest {
                path: rel,
                sha256: sha256_file(a)?,
            });
        }
        digests.sort_by(|a, b| a.path.cmp(&b.path));
        self.manifest.artifacts = digests;
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        write_json(&out_dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&path).map_err(|source| AppError::Read {
        path: path.clone(),
        source,
    })?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| AppError::parse(&path, e.to_string()))?;
    if m.format != MANIFEST_FORMAT || m.version != RESULTS_VERSION {
        return Err(AppError::Schema {
            path,
            found: m.format,
            found_version: m.version,
            expected: MANIFEST_FORMAT.into(),
            expected_version: RESULTS_VERSION,
        });
    }
    Ok(m)
}

/// Input files whose current digest differs from the manifest.
pub fn changed_inputs(manifest: &RunManifest) -> Vec<PathBuf> {
    manifest
        .inputs
        .iter()
        .filter(|d| sha256_file(&d.path).ok().as_deref() != Some(d.sha256.as_str()))
        .map(|d| d.path.clone())
        .collect()
}

/// Artifacts of `expected` whose digest under `out_dir` differs.
pub fn differing_artifacts(expected: &RunManifest, out_dir: &Path) -> Vec<PathBuf> {
    expected
        .artifacts
        .iter()
        .filter(|d| sha256_file(&out_dir.join(&d.path)).ok().as_deref() != Some(d.sha256.as_str()))
        .map(|d| d.path.clone())
        .collect()
}
