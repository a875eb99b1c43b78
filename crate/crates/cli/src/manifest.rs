//! Provenance record attached to every output.
//!
//! Worker count and output directory are left out on purpose: neither may
//! change the bytes of an output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub struct RunManifest {
    command: &'static str,
    flags: Value,
    inputs: BTreeMap<&'static str, (String, String)>,
    seed: Option<u64>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|source| ovdbench::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &'static str, flags: &impl Serialize) -> Self {
        Self {
            command,
            flags: serde_json::to_value(flags).expect("flags serialize"),
            inputs: BTreeMap::new(),
            seed: None,
        }
    }

    pub fn input(mut self, role: &'static str, path: &Path) -> Result<Self, CliError> {
        let digest = sha256_file(path)?;
        self.inputs.insert(role, (path.display().to_string(), digest));
        Ok(self)
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn to_value(&self) -> Value {
        let inputs: serde_json::Map<String, Value> = self
            .inputs
            .iter()
            .map(|(role, (path, digest))| (role.to_string(), json!({"path": path, "sha256": digest})))
            .collect();
        json!({
            "tool": "ovdbench",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "flags": self.flags,
            "inputs": inputs,
            "seed": self.seed,
        })
    }

    /// Single-line form for text outputs.
    pub fn to_line(&self) -> String {
        format!("manifest: {}", self.to_value())
    }
}
