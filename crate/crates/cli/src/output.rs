//! Artifact directory: files are staged in a hidden temporary directory
//! next to the destination and moved into place only when the run
//! succeeds. Every file carries the manifest hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fluctlab_core::dynamics::format_float;
use fluctlab_core::StatSeries;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io(op: &'static str) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::runtime("cli", op, e.to_string())
}

/// A CSV cell. Floats are written with 17 significant digits.
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format_float(*x),
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

pub struct Artifacts {
    staging: TempDir,
    dest: PathBuf,
    hash: String,
    files: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dest: &Path, hash: String) -> Result<Self, CliError> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(io("emit_report"))?;
        let staging = tempfile::Builder::new()
            .prefix(".fluctlab-")
            .tempdir_in(&parent)
            .map_err(io("emit_report"))?;
        Ok(Artifacts {
            staging,
            dest: dest.to_path_buf(),
            hash,
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.staging.path().join(name), bytes).map_err(io("emit_report"))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// First line of every CSV: `# manifest <hash>`.
    pub fn csv_preamble(&self) -> String {
        format!("# manifest {}\n", self.hash)
    }

    /// Writes bytes that already start with [`Artifacts::csv_preamble`].
    pub fn raw_csv(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write(name, bytes)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<(), CliError> {
        let mut s = self.csv_preamble();
        s.push_str(&header.join(","));
        s.push('\n');
        for row in rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        self.write(name, s.as_bytes())
    }

    /// `grid,estimate,stderr,replicas`, with the first column named
    /// `grid_name`.
    pub fn series_csv(&mut self, name: &str, grid_name: &str, series: &StatSeries) -> Result<(), CliError> {
        let rows: Vec<Vec<Cell>> = (0..series.len())
            .map(|i| {
                vec![
                    Cell::F(series.grid[i]),
                    Cell::F(series.estimates[i]),
                    Cell::F(series.stderrs[i]),
                    Cell::U(series.replicas as u64),
                ]
            })
            .collect();
        self.csv(name, &[grid_name, "estimate", "stderr", "replicas"], &rows)
    }

    /// Pretty JSON object with a `manifest_hash` key; keys come out sorted.
    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let v = serde_json::to_value(value).map_err(|e| CliError::runtime("cli", "emit_report", e.to_string()))?;
        let mut obj = match v {
            Value::Object(m) => m,
            other => {
                let mut m = serde_json::Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        obj.insert("manifest_hash".into(), Value::String(self.hash.clone()));
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` and moves the directory into place. An
    /// existing destination is replaced only after the new one is complete.
    pub fn finish(self, manifest: Value) -> Result<PathBuf, CliError> {
        let mut m = manifest;
        m["files"] = json!(self.files);
        m["manifest_hash"] = json!(self.hash);
        let mut text = serde_json::to_string_pretty(&m).expect("JSON values serialize");
        text.push('\n');
        fs::write(self.staging.path().join("manifest.json"), text).map_err(io("emit_report"))?;
        let staged = self.staging.keep();
        let old = if self.dest.exists() {
            let aside = staged.with_extension("old");
            fs::rename(&self.dest, &aside).map_err(io("emit_report"))?;
            Some(aside)
        } else {
            None
        };
        if let Err(e) = fs::rename(&staged, &self.dest) {
            let _ = fs::remove_dir_all(&staged);
            if let Some(aside) = old {
                let _ = fs::rename(aside, &self.dest);
            }
            return Err(io("emit_report")(e));
        }
        if let Some(aside) = old {
            fs::remove_dir_all(aside).map_err(io("emit_report"))?;
        }
        Ok(self.dest)
    }
}
