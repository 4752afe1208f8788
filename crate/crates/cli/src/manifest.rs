//! Reproducibility header embedded in every report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed: None,
            params: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, name: impl Into<String>, bytes: &[u8]) -> &mut Self {
        self.inputs.push(InputDigest {
            name: name.into(),
            sha256: sha256_hex(bytes),
        });
        self
    }

    /// `#`-prefixed header lines for delimited reports.
    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# trapnode {} {}", self.tool_version, self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed {seed}");
        }
        for (k, v) in &self.params {
            let _ = writeln!(s, "# param {k}={v}");
        }
        for i in &self.inputs {
            let _ = writeln!(s, "# input {} sha256={}", i.name, i.sha256);
        }
        s
    }
}

/// Delimited report: manifest header, column names, rows.
pub struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn render(&self, manifest: &RunManifest) -> String {
        let mut s = manifest.header();
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::input(format!("stdout: {e}")))
        }
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Writes the structured summary `{"manifest": .., "summary": ..}` if asked.
pub fn emit_summary<T: Serialize>(
    path: Option<&PathBuf>,
    manifest: &RunManifest,
    summary: &T,
) -> CliResult<()> {
    let Some(p) = path else { return Ok(()) };
    let doc = serde_json::json!({ "manifest": manifest, "summary": summary });
    let mut text =
        serde_json::to_string_pretty(&doc).map_err(|e| CliError::input(format!("summary: {e}")))?;
    text.push('\n');
    write_file(p, text.as_bytes())
}

/// Float cell with a fixed number of decimals so reports diff cleanly.
pub fn num(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}
