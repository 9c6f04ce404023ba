//! Deterministic artifact writing with a content-hashed manifest.
//!
//! Every output file is registered in `manifest.json` together with its
//! sha256, the config hash and the seed, so a run can be re-checked (and
//! re-run bit-exactly) from the manifest alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects artifacts for one run directory.
pub struct OutputWriter {
    directory: PathBuf,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    config_hash: &'a str,
    seed: u64,
    files: &'a BTreeMap<String, String>,
}

impl OutputWriter {
    pub fn new(directory: &Path) -> Result<Self> {
        fs::create_dir_all(directory)?;
        Ok(OutputWriter {
            directory: directory.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn directory(&self) -> &Path {
        &self.directory
    }

    /// Write one artifact and record its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.directory.join(name);
        fs::write(&path, bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Finish the run: write `manifest.json` listing every artifact.
    pub fn finalize(mut self, config_text: &str, seed: u64) -> Result<PathBuf> {
        let config_hash = sha256_hex(config_text.as_bytes());
        let manifest = Manifest {
            schema_version: 1,
            config_hash: &config_hash,
            seed,
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.directory.join("manifest.json");
        fs::write(&path, text.as_bytes())?;
        self.files
            .insert("manifest.json".into(), sha256_hex(text.as_bytes()));
        Ok(path)
    }
}

/// Fixed-precision float formatting shared by all CSV artifacts so outputs
/// are byte-stable across runs.
pub fn fmt_float(value: f64) -> String {
    format!("{value:.12e}")
}

/// Assemble a CSV from a header and rows of preformatted cells.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
