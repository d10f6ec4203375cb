//! Run manifest: resolved config, input digests and per-stage status. The two
//! unix timestamps are the only fields that differ between identical runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST_SCHEMA: &str = "forge-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Output path (relative to the run directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Directory the config's relative paths resolve against.
    pub base_dir: PathBuf,
    /// Input path (relative to `base_dir`) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    #[serde(default)]
    pub failed_stage: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// All regular files under `dir`, sorted, as paths relative to `root`.
pub fn list_files(root: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&d)
            .with_context(|| format!("listing {}", d.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn rel_key(path: &Path) -> String {
    path.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

impl Manifest {
    pub fn new(config: &PipelineConfig, base_dir: &Path) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            seed: config.seed,
            config_hash: sha256_hex(config.canonical_json().as_bytes()),
            config: config.clone(),
            base_dir: base_dir.to_path_buf(),
            inputs: BTreeMap::new(),
            stages: Vec::new(),
            failed_stage: None,
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&mut self, out_dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(out_dir.join(MANIFEST_FILE), text).context("writing manifest")
    }

    /// Replace any earlier record of the same stage.
    pub fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.stage != rec.stage);
        self.stages.push(rec);
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Inputs whose digest no longer matches the recorded one.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|(rel, digest)| file_digest(&self.base_dir.join(rel)).ok().as_deref() != Some(digest.as_str()))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}

/// Manifest JSON with the timestamps blanked, for comparing runs.
pub fn without_timestamps(text: &str) -> Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("started_unix".into(), 0.into());
        obj.insert("finished_unix".into(), 0.into());
    }
    Ok(serde_json::to_string_pretty(&v)?)
}
