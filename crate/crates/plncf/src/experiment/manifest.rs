//! Run manifest: a single JSON inventory at the output root recording the
//! config hash, the tool version, per-stage wall-clock, and a content digest
//! for every emitted file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub wall_clock_secs: f64,
    /// Output-root-relative path, forward slashes, to sha256 hex.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: BTreeMap::new(),
        }
    }

    /// Load the manifest under `out_root`, or start a fresh one. An existing
    /// manifest for a different config is an error: mixed-recipe output
    /// trees must never look resumable.
    pub fn load_or_init(out_root: &Path, config_hash: &str) -> Result<Self, ExperimentError> {
        let path = out_root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::new(config_hash.to_string()));
        }
        let text = std::fs::read_to_string(&path)?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| ExperimentError::Schema(e.to_string()))?;
        if manifest.config_hash != config_hash {
            return Err(ExperimentError::ManifestMismatch {
                existing: manifest.config_hash,
                current: config_hash.to_string(),
            });
        }
        Ok(manifest)
    }

    /// Replace one stage's record with freshly digested files.
    pub fn record_stage(
        &mut self,
        stage: &str,
        wall_clock_secs: f64,
        files: &[PathBuf],
        out_root: &Path,
    ) -> Result<(), ExperimentError> {
        let mut digests = BTreeMap::new();
        for file in files {
            let rel = file
                .strip_prefix(out_root)
                .unwrap_or(file)
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            digests.insert(rel, sha256_file(file)?);
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                wall_clock_secs,
                files: digests,
            },
        );
        Ok(())
    }

    pub fn save(&self, out_root: &Path) -> Result<(), ExperimentError> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| ExperimentError::Schema(e.to_string()))?;
        std::fs::create_dir_all(out_root)?;
        std::fs::write(out_root.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, ExperimentError> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}
