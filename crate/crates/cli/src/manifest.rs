//! The run manifest: what was invoked, with which resolved settings, on
//! which inputs. Written before any numeric work starts, so even a crashed
//! run leaves an exact record, and `resolved.toml` fed back through
//! `--config` replays the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::spec::RunSpec;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub out_dir: String,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Every knob the command consumed, defaults materialized.
    pub resolved: RunSpec,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, out_dir: &Path, resolved: RunSpec) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            out_dir: out_dir.display().to_string(),
            inputs: BTreeMap::new(),
            resolved,
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), sha256_hex(path)?);
        Ok(())
    }

    /// Create the run directory and write `manifest.json` plus the
    /// replayable `resolved.toml`.
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
        let json = serde_json::to_string_pretty(self)?;
        write_text(&out_dir.join("manifest.json"), &json)?;
        let toml_text = toml::to_string_pretty(&self.resolved)
            .map_err(|e| CliError::Runtime(format!("cannot encode resolved config: {e}")))?;
        write_text(&out_dir.join("resolved.toml"), &toml_text)
    }
}

pub fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
