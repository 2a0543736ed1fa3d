use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsio;

/// Record of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    /// Input path to SHA-256 of its contents; directories hash every file.
    pub inputs: BTreeMap<String, String>,
    /// Output path to SHA-256 of what was written.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub version: String,
}

/// Collects inputs and outputs while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: Vec<String>, config_path: Option<&Path>, seed: u64) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                args,
                config_path: config_path.map(Path::to_path_buf),
                seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                wall_time_s: 0.0,
                exit_code: 0,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = if path.is_dir() { fsio::sha256_dir(path)? } else { fsio::sha256_file(path)? };
        self.manifest.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Writes `bytes` atomically and records the output.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        fsio::write_atomic(path, bytes)?;
        self.manifest.outputs.insert(path.display().to_string(), fsio::sha256_hex(bytes));
        Ok(())
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.manifest.outputs
    }

    /// Writes the manifest itself and returns it.
    pub fn finish(mut self, path: &Path, exit_code: i32) -> Result<RunManifest> {
        self.manifest.exit_code = exit_code;
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fsio::write_atomic(path, text.as_bytes())?;
        Ok(self.manifest)
    }
}
