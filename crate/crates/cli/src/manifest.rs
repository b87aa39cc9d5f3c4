//! Run manifests: every subcommand records its resolved config, seeds, and
//! input/output hashes, enough to replay the run byte-for-byte.

use proplm::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub command: String,
    /// Snapshot of the root config after flag overrides.
    pub config: toml::Value,
    /// Effective root seed for this run.
    pub seed: u64,
    pub input_hashes: BTreeMap<String, String>,
    /// Relative path -> sha256 of every artifact this run wrote.
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: u64,
}

/// Collects outputs as they are written and finalizes the manifest last, so
/// a manifest's presence implies the run completed.
pub struct ManifestBuilder {
    out: PathBuf,
    command: String,
    config: toml::Value,
    seed: u64,
    input_hashes: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(out: &Path, command: &str, config: toml::Value, seed: u64) -> ManifestBuilder {
        ManifestBuilder {
            out: out.to_path_buf(),
            command: command.to_string(),
            config,
            seed,
            input_hashes: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Config(format!("cannot read input {}: {e}", path.display()))
        })?;
        self.input_hashes.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes an artifact into the output directory and tracks its hash.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.out.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Tracks a file some other component already wrote under the output
    /// directory (checkpoints, metrics streams).
    pub fn note_output(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.out.join(name))?;
        self.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Atomic write of `manifest.json`: tmp file then rename.
    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            artifact_version: ARTIFACT_VERSION,
            command: self.command,
            config: self.config,
            seed: self.seed,
            input_hashes: self.input_hashes,
            outputs: self.outputs,
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        let tmp = self.out.join("manifest.json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(&tmp, self.out.join("manifest.json"))?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
