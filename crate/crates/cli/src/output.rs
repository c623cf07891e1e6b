//! Tables, run manifests and the on-disk formats.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Provenance block written at the top of every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    /// Canonical compact JSON of the configuration actually used.
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_path: None,
            config: None,
            seed: None,
            shots: None,
            outputs: vec![],
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
        }
    }

    fn comment_lines(&self) -> String {
        let opt = |v: &Option<String>| v.clone().unwrap_or_default();
        let num = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            ("command", self.command.clone()),
            ("config_path", opt(&self.config_path)),
            ("config", opt(&self.config)),
            ("seed", num(self.seed)),
            ("shots", num(self.shots)),
            ("outputs", self.outputs.join(" ")),
            ("tool_version", self.tool_version.clone()),
            ("timestamp", self.timestamp.clone()),
        ]
        .iter()
        .map(|(k, v)| format!("# {k}: {v}\n"))
        .collect()
    }
}

/// UTC time of the run, or of `SOURCE_DATE_EPOCH` when that is set so that
/// reruns can be compared byte for byte.
fn timestamp() -> String {
    let when = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    when.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Decimal notation with 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit, e.g. 9.99…→10.0…
    if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 12 && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
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

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => fmt_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(_) | Cell::Empty => Value::Null,
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    /// Suffix of the sibling CSV file; the first table of an output has none.
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Self {
            name,
            columns: columns.to_vec(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.to_string(), v.json()))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Where the main output goes, and the sibling file of each further table.
pub fn table_paths(output: Option<&Path>, tables: &[Table], format: Format) -> Vec<Option<PathBuf>> {
    tables
        .iter()
        .enumerate()
        .map(|(i, t)| {
            output.map(|p| match (format, i) {
                (Format::Json, _) | (Format::Csv, 0) => p.to_path_buf(),
                (Format::Csv, _) => p.with_extension(format!("{}.csv", t.name)),
            })
        })
        .collect()
}

/// Writes all tables. JSON puts everything into one document; CSV writes
/// the first table to `output` and each further one to a sibling file, or
/// everything to stdout separated by blank lines.
pub fn emit(
    manifest: &RunManifest,
    tables: &[Table],
    extra: Option<(&str, Value)>,
    output: Option<&Path>,
    format: Format,
) -> Result<()> {
    match format {
        Format::Json => {
            let mut doc = Map::new();
            doc.insert("manifest".into(), serde_json::to_value(manifest)?);
            for t in tables {
                doc.insert(t.name.to_string(), t.to_json());
            }
            if let Some((k, v)) = extra {
                doc.insert(k.to_string(), v);
            }
            let text = serde_json::to_string_pretty(&Value::Object(doc))? + "\n";
            write_to(output, &text)
        }
        Format::Csv => {
            let header = manifest.comment_lines();
            match output {
                Some(_) => {
                    for (t, path) in tables.iter().zip(table_paths(output, tables, format)) {
                        write_to(path.as_deref(), &(header.clone() + &t.to_csv()?))?;
                    }
                    Ok(())
                }
                None => {
                    let body: Vec<String> = tables.iter().map(Table::to_csv).collect::<Result<_>>()?;
                    write_to(None, &(header + &body.join("\n")))
                }
            }
        }
    }
}

pub fn write_to(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}
