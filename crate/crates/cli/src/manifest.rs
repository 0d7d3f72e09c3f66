//! Run manifests: every command logs its seed, input hashes, options and
//! outputs to `manifest.json` so runs can be reproduced exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ecotrans::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct PackageInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl PackageInfo {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub package: PackageInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Scenario descriptor (generator spec or preset marker).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<serde_json::Value>,
    /// SHA-256 of the canonical scenario JSON.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec_sha256: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, InputRecord>,
    pub options: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, options: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            package: PackageInfo::current(),
            seed: None,
            scenario: None,
            spec_sha256: None,
            inputs: BTreeMap::new(),
            options,
            outputs: vec![],
        }
    }

    pub fn with_scenario(mut self, descriptor: serde_json::Value, seed: Option<u64>) -> Self {
        self.spec_sha256 = Some(sha256_hex(descriptor.to_string().as_bytes()));
        self.scenario = Some(descriptor);
        self.seed = seed;
        self
    }

    pub fn record_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: file_sha256(path)?,
            },
        );
        Ok(())
    }

    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Writes `manifest.json` into `dir` (records itself as an output).
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.record_output("manifest.json");
        let mut out = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut out, &self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
