//! CSV tables and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::CliError;

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Floats carry 17 significant digits, enough to round-trip binary64.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Numeric(format!("csv encoding: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        w.into_inner().map_err(|e| CliError::Numeric(format!("csv encoding: {e}")))
    }
}

/// Where the artifacts of one run go.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        Self { csv: dir.join(format!("{stem}.csv")), manifest: dir.join(format!("{stem}.json")) }
    }

    pub fn write(&self, table: &Table, manifest: &Value) -> Result<(), CliError> {
        let unwritable = |p: &Path, e: std::io::Error| CliError::Config(format!("cannot write {}: {e}", p.display()));
        if let Some(dir) = self.csv.parent() {
            fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
        }
        fs::write(&self.csv, table.to_csv()?).map_err(|e| unwritable(&self.csv, e))?;
        let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Numeric(e.to_string()))?;
        fs::write(&self.manifest, text + "\n").map_err(|e| unwritable(&self.manifest, e))
    }
}
