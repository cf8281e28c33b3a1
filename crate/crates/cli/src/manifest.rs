//! Run manifests: configuration hash, code version, seed and checksums
//! of every emitted file. Re-running with the same config hash and seed
//! reproduces byte-identical numeric outputs; the manifest records what
//! was produced.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub command: String,
    pub code_version: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Collects output files as they are written and assembles the manifest.
pub struct ManifestBuilder {
    scenario: String,
    command: String,
    config_sha256: String,
    master_seed: u64,
    started_unix_s: u64,
    out_dir: PathBuf,
    outputs: Vec<OutputRecord>,
}

impl ManifestBuilder {
    pub fn new(
        scenario: &str,
        command: &str,
        config_bytes: &[u8],
        master_seed: u64,
        out_dir: &Path,
    ) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|e| {
            CliError::runtime(format!("cannot create {}: {e}", out_dir.display()))
        })?;
        Ok(Self {
            scenario: scenario.to_string(),
            command: command.to_string(),
            config_sha256: sha256_hex(config_bytes),
            master_seed,
            started_unix_s: unix_now(),
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    /// Write an output file and record its checksum.
    pub fn write_file(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(OutputRecord {
            file: name.to_string(),
            sha256: sha256_hex(contents),
        });
        Ok(path)
    }

    /// Serialize a JSON output file and record it.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::runtime(format!("JSON encode {name}: {e}")))?;
        text.push('\n');
        self.write_file(name, text.as_bytes())?;
        Ok(())
    }

    /// Write `manifest.json` itself; call last.
    pub fn finish(self) -> Result<(), CliError> {
        let manifest = RunManifest {
            scenario: self.scenario,
            command: self.command,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.config_sha256,
            master_seed: self.master_seed,
            started_unix_s: self.started_unix_s,
            finished_unix_s: unix_now(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::runtime(format!("JSON encode manifest: {e}")))?;
        text.push('\n');
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, text)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}
