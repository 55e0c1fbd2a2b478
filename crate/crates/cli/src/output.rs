// SPDX-License-Identifier: MIT OR Apache-2.0

//! Staged outputs and the run manifest.
//!
//! Files go to a hidden directory inside `--out` and are renamed into place
//! only after the command succeeds. The manifest is moved last.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::failure::Failure;

pub const MANIFEST: &str = "run_manifest.json";

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::input(format!("{}: {e}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Seconds since the epoch, from `SOURCE_DATE_EPOCH` when set.
fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

pub struct Run {
    command: &'static str,
    config: Option<PathBuf>,
    seed: u64,
    settings: Map<String, Value>,
    inputs: Vec<(&'static str, PathBuf)>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    pub fn new(command: &'static str, config: Option<PathBuf>, seed: u64) -> Self {
        Self {
            command,
            config,
            seed,
            settings: Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &'static str, path: &Path) {
        self.inputs.push((role, path.to_path_buf()));
    }

    /// Resolved option recorded in the manifest.
    pub fn setting(&mut self, key: &str, value: impl Into<Value>) {
        self.settings.insert(key.to_string(), value.into());
    }

    pub fn output(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), bytes.into()));
    }

    pub fn json(&mut self, name: &str, value: &Value) {
        let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
        text.push('\n');
        self.output(name, text);
    }

    fn manifest(&self, out: &Path) -> Result<Value, Failure> {
        let mut inputs = Vec::new();
        for (role, path) in &self.inputs {
            inputs.push(json!({
                "role": role,
                "path": path.display().to_string(),
                "sha256": sha256_file(path)?,
            }));
        }
        let outputs: Vec<String> = self
            .outputs
            .iter()
            .map(|(name, _)| out.join(name).display().to_string())
            .collect();
        Ok(json!({
            "command": self.command,
            "config": self.config.as_ref().map(|p| p.display().to_string()),
            "seeds": { "seed": self.seed },
            "settings": self.settings,
            "inputs": inputs,
            "outputs": outputs,
            "timestamp": timestamp(),
        }))
    }

    /// Writes everything to a staging directory, then moves it into `out`.
    pub fn commit(mut self, out: &Path) -> Result<Vec<PathBuf>, Failure> {
        let manifest = self.manifest(out)?;
        self.json(MANIFEST, &manifest);
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        let staging = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(out)
            .map_err(|e| io(out, e))?;
        stage(&staging, &self.outputs)?;
        let mut written = Vec::new();
        for (name, _) in &self.outputs {
            let target = out.join(name);
            fs::rename(staging.path().join(name), &target).map_err(|e| io(&target, e))?;
            written.push(target);
        }
        Ok(written)
    }
}

fn stage(dir: &TempDir, outputs: &[(String, Vec<u8>)]) -> Result<(), Failure> {
    for (name, bytes) in outputs {
        let path = dir.path().join(name);
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
