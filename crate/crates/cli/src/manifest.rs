//! Artifact directories and their manifests.
//!
//! Data files are written deterministically; only `manifest.json` carries
//! wall-clock timestamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{fail, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub config_digest: String,
    /// Effective value of every config key, defaults included.
    pub config: BTreeMap<String, Value>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputFile>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn config_digest(config: &BTreeMap<String, Value>) -> String {
    let json = serde_json::to_string(config).expect("config map serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Collects the files one command writes into a directory.
pub struct ArtifactDir {
    dir: PathBuf,
    started_at: String,
    outputs: Vec<OutputFile>,
    inputs: Vec<String>,
}

impl ArtifactDir {
    pub fn create(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Pipeline {
            module: "manifest",
            message: format!("cannot create {}: {e}", dir.display()),
        })?;
        Ok(ArtifactDir {
            dir,
            started_at: now(),
            outputs: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Pipeline {
            module: "manifest",
            message: format!("cannot write {}: {e}", path.display()),
        })?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(fail("manifest"))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(self, command: &str, argv: &[String], config: &BTreeMap<String, Value>, seeds: Vec<u64>) -> Result<PathBuf, CliError> {
        let mut outputs = self.outputs;
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: config_digest(config),
            config: config.clone(),
            seeds,
            inputs: self.inputs,
            outputs,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(fail("manifest"))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(fail("manifest"))?;
        Ok(self.dir)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
