use std::path::Path;

use extremal_clock_core::conditions::{ConditionReport, TrendReport};
use extremal_clock_core::stats::format_float;
use serde::Serialize;

use crate::CliError;

/// Values shared by every row of one table: `(n, p, c, β, seed)`.
#[derive(Debug, Clone, Copy)]
pub struct Provenance {
    pub n: Option<usize>,
    pub p: usize,
    pub c: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Provenance {
    fn cells(&self) -> [String; 5] {
        [
            self.n.map(|n| n.to_string()).unwrap_or_default(),
            self.p.to_string(),
            format_float(self.c),
            format_float(self.beta),
            self.seed.to_string(),
        ]
    }
}

/// A cell of a CSV table.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
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

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, prov: Provenance, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns.len(), "row width of table {}", self.name);
        let mut row: Vec<String> = prov.cells().to_vec();
        row.extend(cells.iter().map(Cell::render));
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(dir.join(format!("{}.csv", self.name)))?;
        let mut header = vec!["n", "p", "c", "beta", "seed"];
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Results {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tables: Vec<String>,
    pub reports: Vec<ConditionReport>,
    pub trends: Vec<TrendReport>,
    /// Set when some replicas stopped on the step budget.
    pub partial: bool,
    pub notes: Vec<String>,
    pub runtime_seconds: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: &'a str,
    pub config: &'a crate::ExperimentConfig,
    pub versions: Versions,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Versions {
    pub extremal_clock: &'static str,
    pub extremal_clock_core: &'static str,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            extremal_clock: env!("CARGO_PKG_VERSION"),
            extremal_clock_core: extremal_clock_core::VERSION,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
