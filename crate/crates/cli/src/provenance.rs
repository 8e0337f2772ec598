//! Per-command provenance records. Timestamps live only here so every other
//! output stays byte-identical across re-runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use wavesel::Result;

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub timestamp: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<InputHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: Vec<(String, String)>) -> Self {
        Provenance {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            seed,
            config,
            inputs: Vec::new(),
        }
    }

    pub fn hash_inputs<I: IntoIterator<Item = PathBuf>>(&mut self, paths: I) -> Result<()> {
        for p in paths {
            self.inputs.push(InputHash {
                sha256: sha256_file(&p)?,
                path: p.display().to_string(),
            });
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}
