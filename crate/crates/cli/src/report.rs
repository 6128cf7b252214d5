//! Result tables, summaries and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use speclab_core::PowerLawFit;

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    /// Floats carry 17 significant digits.
    pub fn render(&self) -> String {
        match self {
            Cell::Num(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
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
impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().context("flushing csv")
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[i] {
                    Cell::Num(v) => *v,
                    Cell::Int(v) => *v as f64,
                    _ => f64::NAN,
                })
                .collect(),
        )
    }
}

/// A fitted exponent next to its theoretical value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentReport {
    pub name: String,
    pub theoretical: f64,
    pub fitted: f64,
    pub stderr: f64,
    pub r_squared: f64,
    /// Row range `[start, end)` of the fit.
    pub window: [usize; 2],
    pub tolerance: f64,
    pub pass: bool,
}

impl ExponentReport {
    /// `fitted = sign * slope`; passes when within `tolerance` and `r^2 >= 0.95`.
    pub fn from_fit(name: &str, theoretical: f64, fit: &PowerLawFit, sign: f64, tolerance: f64) -> Self {
        let fitted = sign * fit.slope;
        Self {
            name: name.to_string(),
            theoretical,
            fitted,
            stderr: fit.slope_stderr,
            r_squared: fit.r_squared,
            window: [fit.window.start, fit.window.end],
            tolerance,
            pass: (fitted - theoretical).abs() <= tolerance && fit.acceptable(),
        }
    }
}

/// One named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub config: String,
    pub check: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: String,
    pub results: Table,
    /// Additional CSV files by name.
    pub extra_tables: Vec<(String, Table)>,
    pub exponents: Vec<ExponentReport>,
    pub checks: Vec<CheckResult>,
    pub flags: Vec<String>,
    pub details: Value,
    pub plot: Option<Plot>,
    pub modes: u64,
    pub n_points: usize,
}

impl Report {
    pub fn new(experiment: &str, results: Table) -> Self {
        Self {
            experiment: experiment.to_string(),
            n_points: results.rows.len(),
            results,
            extra_tables: Vec::new(),
            exponents: Vec::new(),
            checks: Vec::new(),
            flags: Vec::new(),
            details: json!({}),
            plot: None,
            modes: 0,
        }
    }

    /// All exponents and checks passed.
    pub fn passed(&self) -> bool {
        self.exponents.iter().all(|e| e.pass) && self.checks.iter().all(|c| c.pass)
    }

    pub fn summary(&self, config: &Value, wall_clock: f64) -> Value {
        json!({
            "experiment": self.experiment,
            "passed": self.passed(),
            "exponents": self.exponents,
            "checks": self.checks,
            "flags": self.flags,
            "details": self.details,
            "config": config,
            "metadata": {
                "wall_clock_seconds": wall_clock,
                "modes": self.modes,
                "points": self.n_points,
            },
        })
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}
