//! Run manifests: what was run, on which inputs, with which parameters.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ConfigRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_prime: Option<f64>,
}

/// Everything needed to reproduce an output. Contains no timestamps, so an
/// identical invocation yields an identical manifest and hash.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub config: ConfigRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    /// Remaining command options, as given.
    pub options: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> std::io::Result<InputDigest> {
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&fs::read(path)?),
    })
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: ConfigRecord::default(),
            seed: None,
            samples: None,
            options: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }

    /// `{"hash": ..., ...fields}` for embedding in JSON outputs.
    pub fn embed(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.insert("hash".into(), serde_json::Value::String(self.hash()));
        }
        value
    }

    /// Comment line for CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!("# manifest {}", self.hash())
    }
}
