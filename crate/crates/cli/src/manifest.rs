//! Output bookkeeping: every run records the files it read (with their
//! SHA-256), the files it wrote (with row counts) and the effective
//! configuration, as one JSON line appended to `manifest.jsonl`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use dpca_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct OutputRecord {
    path: String,
    rows: usize,
}

#[derive(Debug, Serialize)]
struct ManifestLine<'a> {
    command: &'a str,
    version: &'static str,
    config_hash: String,
    config: &'a Config,
    inputs: &'a [InputRecord],
    outputs: &'a [OutputRecord],
    counts: &'a BTreeMap<String, usize>,
    warnings: &'a [String],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

/// One invocation's record. Paths are kept relative to the output
/// directory (or reduced to a file name) so manifests do not depend on
/// where the tree lives.
#[derive(Debug)]
pub struct Run {
    command: String,
    out_dir: PathBuf,
    inputs: Vec<InputRecord>,
    outputs: Vec<OutputRecord>,
    counts: BTreeMap<String, usize>,
    warnings: Vec<String>,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(file_error(out_dir))?;
        Ok(Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn display_path(&self, path: &Path) -> String {
        match path.strip_prefix(&self.out_dir) {
            Ok(rel) => rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
            Err(_) => path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
        }
    }

    /// Reads a whole input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(file_error(path))?;
        self.inputs.push(InputRecord {
            path: self.display_path(path),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    /// Writes `bytes` to `rel` under the output directory. Rows exclude the
    /// header line.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(file_error(parent))?;
        }
        std::fs::write(&path, bytes).map_err(file_error(&path))?;
        let lines = bytes.iter().filter(|b| **b == b'\n').count();
        self.outputs.push(OutputRecord {
            path: rel.to_string(),
            rows: if rel.ends_with(".csv") { lines.saturating_sub(1) } else { lines },
        });
        Ok(())
    }

    /// Renders with `f` and writes the result.
    pub fn emit(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn count(&mut self, key: &str, value: usize) {
        *self.counts.entry(key.to_string()).or_default() += value;
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn finish(self, cfg: &Config) -> Result<()> {
        let config_json = serde_json::to_string(cfg)?;
        let line = serde_json::to_string(&ManifestLine {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: sha256_hex(config_json.as_bytes()),
            config: cfg,
            inputs: &self.inputs,
            outputs: &self.outputs,
            counts: &self.counts,
            warnings: &self.warnings,
        })?;
        let path = self.out_dir.join(MANIFEST);
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(file_error(&path))?;
        writeln!(file, "{line}").map_err(file_error(&path))?;
        Ok(())
    }
}
