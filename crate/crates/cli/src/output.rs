use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::error::CliError;

/// A cell, printed with 17 significant digits when real.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format!("{v:.16e}"),
            Cell::Bool(v) => u8::from(*v).to_string(),
            Cell::Text(v) => v.clone(),
        }
    }
}

macro_rules! cells {
    ($($x:expr),* $(,)?) => {
        vec![$($crate::output::Cell::from($x)),*]
    };
}
pub(crate) use cells;

#[derive(Debug)]
pub struct Table {
    pub file: String,
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: impl Into<String>, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(&self.file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        w.write_record(&self.header)
            .map_err(|e| CliError::io(&path, e))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .map_err(|e| CliError::io(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Serialize)]
struct FileEntry {
    name: String,
    rows: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, A: Serialize> {
    subcommand: &'a str,
    version: &'a str,
    library_version: &'a str,
    threads: usize,
    out_dir: String,
    args: &'a A,
    files: Vec<FileEntry>,
    compute_seconds: f64,
    write_seconds: f64,
}

pub struct RunRecord<'a, A: Serialize> {
    pub subcommand: &'a str,
    pub args: &'a A,
    pub threads: usize,
    pub compute: Duration,
    pub write: Duration,
}

/// Writes every table, then `<subcommand>_manifest.json`.
pub fn write_all<A: Serialize>(
    dir: &Path,
    tables: &[Table],
    record: RunRecord<'_, A>,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let start = std::time::Instant::now();
    for t in tables {
        t.write(dir)?;
    }
    let write = record.write + start.elapsed();
    let manifest = Manifest {
        subcommand: record.subcommand,
        version: env!("CARGO_PKG_VERSION"),
        library_version: twoaxis::VERSION,
        threads: record.threads,
        out_dir: dir.display().to_string(),
        args: record.args,
        files: tables
            .iter()
            .map(|t| FileEntry {
                name: t.file.clone(),
                rows: t.len(),
            })
            .collect(),
        compute_seconds: record.compute.as_secs_f64(),
        write_seconds: write.as_secs_f64(),
    };
    let path = dir.join(format!("{}_manifest.json", record.subcommand));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain data");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(Cell::Real(0.1).render(), "1.0000000000000001e-1");
        assert_eq!(Cell::Real(-2.0).render(), "-2.0000000000000000e0");
        assert_eq!(Cell::Int(7).render(), "7");
        assert_eq!(Cell::Bool(true).render(), "1");
    }
}
