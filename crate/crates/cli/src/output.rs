//! Output directory handling: CSV tables, JSON documents and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use serde::Serialize;

use crate::error::CliError;

/// Collects the files of one run and writes `manifest.json` on [`Output::finish`].
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub git_describe: String,
    pub version: String,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
}

/// Rows of a CSV table with a fixed header.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        let mut buf = ryu_like(x);
        if buf == "-0" {
            buf = "0".into();
        }
        buf
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn ryu_like(x: f64) -> String {
    // Rust's `Display` for f64 is already shortest-round-trip
    format!("{x}")
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(self, command: &str, config_name: &str, config_hash: &str, seeds: &[u64]) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            command: command.to_string(),
            config_name: config_name.to_string(),
            config_hash: config_hash.to_string(),
            seeds: seeds.to_vec(),
            git_describe: git_describe(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            files: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

/// `git describe --always --dirty`, or `unknown` outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
