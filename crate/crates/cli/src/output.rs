//! Staged outputs and run manifests.
//!
//! A command renders every output in memory first. Only when it has
//! succeeded are the files written, each to a temporary file in the output
//! directory and then renamed into place, followed by the manifest.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub elapsed_s: f64,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<FileDigest>,
    /// SHA-256 of the effective command configuration as compact JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<FileDigest>,
    pub timings: Timings,
}

/// JSON body with a pointer to the manifest that produced it.
#[derive(Serialize)]
struct WithManifest<'a, T: Serialize> {
    #[serde(flatten)]
    body: &'a T,
    manifest: &'a str,
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.into()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// One command invocation: inputs read, outputs staged, manifest built.
pub struct Run {
    command: String,
    out_dir: PathBuf,
    started: Instant,
    inputs: Vec<FileDigest>,
    staged: Vec<(String, Vec<u8>)>,
    seed: Option<u64>,
    config: serde_json::Value,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Run {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            staged: Vec::new(),
            seed: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.command)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<(), CliError> {
        self.config = serde_json::to_value(config).map_err(|e| CliError::Internal(e.into()))?;
        Ok(())
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Input(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn stage(&mut self, name: &str, bytes: Vec<u8>) {
        self.staged.push((name.to_string(), bytes));
    }

    /// Stages a JSON document carrying a `manifest` field.
    pub fn stage_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let manifest = self.manifest_name();
        let bytes = to_json_bytes(&WithManifest {
            body: value,
            manifest: &manifest,
        })?;
        self.stage(name, bytes);
        Ok(())
    }

    /// Writes every staged file and then the manifest. Returns the paths
    /// written, manifest last.
    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        let config_bytes = serde_json::to_vec(&self.config).map_err(|e| CliError::Internal(e.into()))?;
        let manifest = RunManifest {
            command: self.command.clone(),
            inputs: self.inputs.clone(),
            config_hash: sha256_hex(&config_bytes),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self
                .staged
                .iter()
                .map(|(name, bytes)| FileDigest {
                    path: name.clone(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
            timings: Timings {
                elapsed_s: self.started.elapsed().as_secs_f64(),
            },
        };
        let manifest_bytes = to_json_bytes(&manifest)?;
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Input(anyhow::anyhow!("cannot create {}: {e}", self.out_dir.display())))?;
        let mut written = Vec::new();
        let manifest_name = self.manifest_name();
        for (name, bytes) in self
            .staged
            .iter()
            .map(|(n, b)| (n.as_str(), b))
            .chain([(manifest_name.as_str(), &manifest_bytes)])
        {
            let target = self.out_dir.join(name);
            write_atomic(&target, bytes)
                .map_err(|e| CliError::Input(anyhow::anyhow!("cannot write {}: {e}", target.display())))?;
            written.push(target);
        }
        Ok(written)
    }
}

/// Writes `bytes` to a temporary file beside `target` and renames it over
/// `target`.
pub fn write_atomic(target: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = target
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(target).map_err(|e| e.error)?;
    Ok(())
}
