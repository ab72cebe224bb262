// SPDX-License-Identifier: Apache-2.0

//! Output directory writer and run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::ValueEnum;
use pufsim::BitMatrix;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Scalar config fields replaced from the command line.
    pub overrides: Vec<String>,
    pub files: Vec<FileEntry>,
    pub errors: Vec<String>,
    pub complete: bool,
    pub created_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects every file of one command under `root/<command>/`.
pub struct Output {
    root: PathBuf,
    dir: PathBuf,
    pub format: Format,
    pub manifest: Manifest,
}

impl Output {
    pub fn new(root: &Path, command: &str, format: Format, config_hash: String, seeds: Vec<u64>, overrides: Vec<String>) -> Self {
        Self {
            root: root.to_path_buf(),
            dir: root.join(command),
            format,
            manifest: Manifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                config_hash,
                seeds,
                overrides,
                files: Vec::new(),
                errors: Vec::new(),
                complete: false,
                created_unix: 0,
            },
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write `bytes` to `<command>/<rel>` and record it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.files.push(FileEntry {
            path: format!("{}/{rel}", self.manifest.command),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// A series as `<stem>.csv` or `<stem>.json`, by the selected format.
    pub fn write_series(&mut self, stem: &str, csv: &str) -> Result<()> {
        match self.format {
            Format::Csv => self.write(&format!("{stem}.csv"), csv.as_bytes()),
            Format::Json => {
                let v = csv_to_json(csv);
                self.write_json(&format!("{stem}.json"), &v)
            }
        }
    }

    /// Packed binary plus hex text of a bit matrix.
    pub fn write_bits(&mut self, stem: &str, bits: &BitMatrix) -> Result<()> {
        self.write(&format!("{stem}.bin"), &bits.to_packed_bytes())?;
        self.write(&format!("{stem}.hex"), bits.to_hex().as_bytes())
    }

    pub fn error(&mut self, msg: String) {
        self.manifest.errors.push(msg);
    }

    /// Write `manifest.json`; the timestamp is the only nondeterministic
    /// field of any output.
    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.complete = self.manifest.errors.is_empty();
        self.manifest.created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        fs::create_dir_all(&self.dir)?;
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.manifest)
    }
}

/// Header-keyed records of a CSV table without quoting. Numeric cells
/// become numbers, empty cells null.
pub fn csv_to_json(csv: &str) -> Value {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    Value::Array(
        lines
            .map(|line| {
                let mut rec = Map::new();
                for (k, cell) in header.iter().zip(line.split(',')) {
                    let v = if cell.is_empty() {
                        Value::Null
                    } else if let Ok(i) = cell.parse::<i64>() {
                        Value::from(i)
                    } else if let Ok(x) = cell.parse::<f64>() {
                        Value::from(x)
                    } else {
                        Value::from(cell)
                    };
                    rec.insert((*k).to_string(), v);
                }
                Value::Object(rec)
            })
            .collect(),
    )
}
