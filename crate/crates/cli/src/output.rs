//! Tables, pass/fail checks and their CSV/JSON rendering.

use serde::Serialize;
use serde_json::{json, Map, Value};

/// One table cell. Numbers are written to CSV with 17 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u8> for Cell {
    fn from(v: u8) -> Self {
        Cell::Int(v as i64)
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

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// A named assertion of the subcommand's acceptance set.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// Measured quantity; absent for purely logical checks.
    pub value: Option<f64>,
    /// Upper bound the value must not exceed.
    pub limit: Option<f64>,
    pub pass: bool,
}

impl Check {
    /// Passes when `value ≤ limit` (NaN fails).
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value: Some(value),
            limit: Some(limit),
            pass: value <= limit,
        }
    }

    pub fn holds(name: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            value: None,
            limit: None,
            pass,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match (self.value, self.limit) {
            (Some(v), Some(l)) => write!(f, "{verdict} {}: {v:.3e} (limit {l:.1e})", self.name),
            _ => write!(f, "{verdict} {}", self.name),
        }
    }
}

/// Result of one subcommand run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: String,
    pub params: Value,
    pub checks: Vec<Check>,
    pub table: Table,
    /// Additional structured reports, JSON only.
    pub reports: Map<String, Value>,
    /// Side files as (suffix appended to the output path, contents).
    pub attachments: Vec<(String, String)>,
}

impl Outcome {
    pub fn new(command: &str, params: &impl Serialize, table: Table) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.to_string(),
            params: serde_json::to_value(params)?,
            checks: Vec::new(),
            table,
            reports: Map::new(),
            attachments: Vec::new(),
        })
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn report(&mut self, key: &str, value: &impl Serialize) -> anyhow::Result<()> {
        self.reports.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        let doc = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "params": self.params,
            "passed": self.passed(),
            "checks": self.checks,
            "table": self.table,
            "reports": self.reports,
        });
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn render(&self, format: Format) -> anyhow::Result<String> {
        match format {
            Format::Csv => self.table.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}
