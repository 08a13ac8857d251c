use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Hash of the file with its last CSV column removed, for files whose
    /// last column is wall-clock time. Replays compare this instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_sha256: Option<String>,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<FileHash> {
        let data = fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?;
        Ok(FileHash {
            path: path.display().to_string(),
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
            stable_sha256: None,
        })
    }

    pub fn without_last_column(path: &Path) -> Result<FileHash> {
        let mut h = FileHash::of(path)?;
        let text = fs::read_to_string(path)?;
        let stable: String = text
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() + "\n")
            .collect();
        h.stable_sha256 = Some(sha256_hex(stable.as_bytes()));
        Ok(h)
    }

    /// The hash a replay must reproduce.
    pub fn replay_key(&self) -> &str {
        self.stable_sha256.as_deref().unwrap_or(&self.sha256)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// Record of one command run: the exact arguments, the resolved
/// configuration, seeds and content hashes of every input and output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub rng: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_at: String,
    pub finished_at: String,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: &[String], seed: u64) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                manifest_version: MANIFEST_VERSION,
                tool: env!("CARGO_PKG_NAME").to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                argv: argv.to_vec(),
                config: serde_json::Value::Null,
                seeds: BTreeMap::from([("seed".to_string(), seed)]),
                rng: heatseq_core::numeric::RNG_ALGORITHM.to_string(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: now(),
                finished_at: String::new(),
            },
        }
    }

    pub fn config(&mut self, value: impl Serialize) -> Result<()> {
        self.manifest.config = serde_json::to_value(value)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileHash::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.push(FileHash::of(path)?);
        Ok(())
    }

    pub fn timed_output(&mut self, path: &Path) -> Result<()> {
        self.manifest.outputs.push(FileHash::without_last_column(path)?);
        Ok(())
    }

    /// Writes the manifest as pretty JSON and returns its path.
    pub fn write(mut self, path: PathBuf) -> Result<PathBuf> {
        self.manifest.finished_at = now();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
