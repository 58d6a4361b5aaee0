use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    Fail,
    /// A module error stopped the pipeline; the tables present are partial.
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Equal,
}

/// One invariant outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Serialized as `null` when not finite.
    pub value: Option<f64>,
    pub comparison: Comparison,
    pub tolerance: f64,
    pub passed: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value: finite(value),
            comparison: Comparison::AtMost,
            tolerance,
            passed: value <= tolerance,
        }
    }

    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value: finite(value),
            comparison: Comparison::AtLeast,
            tolerance,
            passed: value >= tolerance,
        }
    }

    pub fn equal(name: &str, value: f64, expected: f64) -> Self {
        Self {
            name: name.into(),
            value: finite(value),
            comparison: Comparison::Equal,
            tolerance: expected,
            passed: value == expected,
        }
    }

    /// Boolean outcome recorded as 1/0 against 1.
    pub fn holds(name: &str, ok: bool) -> Self {
        Self::equal(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

/// Where a plottable series lives: columns of one result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesInfo {
    pub table: String,
    pub x: String,
    pub y: String,
    pub group: Option<String>,
    /// Extra lines for the header comment of the exported file.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub status: RunStatus,
    pub check_only: bool,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    /// Every tolerance the run consulted, configured or built in.
    pub tolerances: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    /// Scalar results; non-finite values are `null`.
    pub metrics: BTreeMap<String, Option<f64>>,
    pub tables: Vec<String>,
    pub series: BTreeMap<String, SeriesInfo>,
    pub error: Option<String>,
    /// Seconds since the epoch; the only field that differs between identical runs.
    pub created_unix: u64,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn passed(&self) -> bool {
        self.status == RunStatus::Pass
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Rows of formatted cells under named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest round-trip decimal form; deterministic across runs.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(self.file_name()))?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Export one series of a finished run as `plot_<name>.csv` next to its manifest, with columns
/// `x,y[,group]` and a `#` header naming the source columns.
pub fn emit_plot_data(manifest_path: &Path, series: &str) -> Result<PathBuf> {
    let manifest = Manifest::read(manifest_path)?;
    let info = manifest.series.get(series).ok_or_else(|| {
        let available: Vec<&str> = manifest.series.keys().map(String::as_str).collect();
        Error::Config(format!(
            "unknown series '{series}'; available: {}",
            if available.is_empty() { "none".to_string() } else { available.join(", ") }
        ))
    })?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(dir.join(&info.table))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Internal(format!("table {} has no column '{name}'", info.table)))
    };
    let mut picks = vec![col(&info.x)?, col(&info.y)?];
    if let Some(g) = &info.group {
        picks.push(col(g)?);
    }
    let out = dir.join(format!("plot_{series}.csv"));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(file, "# series {series} from {} ({} run)", info.table, manifest.kind)?;
    for n in &info.notes {
        writeln!(file, "# {n}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut file);
        let mut head = vec!["x", "y"];
        if info.group.is_some() {
            head.push("group");
        }
        w.write_record(&head)?;
        for rec in reader.records() {
            let rec = rec?;
            w.write_record(picks.iter().map(|&i| &rec[i]))?;
        }
        w.flush()?;
    }
    file.flush()?;
    Ok(out)
}
