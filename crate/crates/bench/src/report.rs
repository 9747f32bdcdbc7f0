//! Report bundles: an accuracy table plus optional named tables, written as
//! one CSV per table and a single `report.json`.
//!
//! Reals are printed with Rust's shortest round-trip formatting, so every
//! number in a CSV parses back to the exact `f64` that produced it.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use calm_core::metrics::Evaluation;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Text(String),
    Int(i64),
    Real(f64),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format!("{v:?}"),
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

/// A rectangular table; every row has one cell per column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(BenchError::Format(format!(
                "table {}: row of {} cells for {} columns",
                self.name,
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of one column, in row order.
    pub fn reals(&self, column: &str) -> Option<Vec<f64>> {
        let k = self.column_index(column)?;
        self.rows.iter().map(|r| r[k].as_real()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Per-task accuracy of one merged model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub method: String,
    pub per_task: Vec<f64>,
    pub average: f64,
}

impl AccuracyReport {
    pub fn new(method: &str, eval: &Evaluation) -> Result<Self> {
        let report = Self {
            method: method.to_string(),
            per_task: eval.per_task.clone(),
            average: eval.average,
        };
        report.validate()?;
        Ok(report)
    }

    /// Every accuracy lies in [0,1] and the average is the mean of the rows.
    pub fn validate(&self) -> Result<()> {
        if self.per_task.is_empty() {
            return Err(BenchError::Format("accuracy report without tasks".into()));
        }
        if self.per_task.iter().any(|a| !(0.0..=1.0).contains(a)) || !(0.0..=1.0).contains(&self.average) {
            return Err(BenchError::Format("accuracy outside [0,1]".into()));
        }
        let mean = self.per_task.iter().sum::<f64>() / self.per_task.len() as f64;
        if (mean - self.average).abs() > 1e-12 {
            return Err(BenchError::Format(format!(
                "average {} differs from per-task mean {}",
                self.average, mean
            )));
        }
        Ok(())
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new("accuracy", &["task", "accuracy"]);
        for (i, &a) in self.per_task.iter().enumerate() {
            t.rows.push(vec![Cell::Text(i.to_string()), Cell::Real(a)]);
        }
        t.rows.push(vec![Cell::from("average"), Cell::Real(self.average)]);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBundle {
    pub title: String,
    pub seed: u64,
    pub accuracy: Option<AccuracyReport>,
    pub tables: Vec<Table>,
}

impl ReportBundle {
    pub fn new(title: &str, seed: u64) -> Self {
        Self {
            title: title.to_string(),
            seed,
            accuracy: None,
            tables: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| BenchError::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// `(file name, contents)` for every output file, in write order.
    pub fn files(&self) -> Result<Vec<(String, String)>> {
        let mut files = Vec::new();
        if let Some(acc) = &self.accuracy {
            acc.validate()?;
            files.push(("accuracy.csv".to_string(), acc.table().to_csv()));
        }
        for t in &self.tables {
            if t.name == "accuracy" || t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(BenchError::Format(format!("unusable table name {:?}", t.name)));
            }
            files.push((format!("{}.csv", t.name), t.to_csv()));
        }
        files.push(("report.json".to_string(), self.to_json()?));
        Ok(files)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, contents) in self.files()? {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }

    /// Human-readable summary for the terminal.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} (seed {})", self.title, self.seed);
        if let Some(acc) = &self.accuracy {
            let cells: Vec<String> = acc.per_task.iter().map(|a| format!("{:.2}", a * 100.0)).collect();
            let _ = writeln!(out, "  {}: average {:.2}  [{}]", acc.method, acc.average * 100.0, cells.join(" "));
        }
        for t in &self.tables {
            let _ = writeln!(out, "  table {} ({} rows)", t.name, t.rows.len());
        }
        out
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
