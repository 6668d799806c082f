//! Artifact writers. Every artifact is a pure function of its inputs, so
//! repeated runs produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Header of every CSV the driver writes.
pub const CSV_HEADER: [&str; 4] = ["method", "precision_setup", "metric", "value"];

/// One long-format CSV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: String,
    pub precision_setup: String,
    pub metric: String,
    pub value: String,
}

impl Row {
    pub fn new(method: &str, setup: &str, metric: &str, value: impl ToString) -> Self {
        Row {
            method: method.to_string(),
            precision_setup: setup.to_string(),
            metric: metric.to_string(),
            value: value.to_string(),
        }
    }

    /// Numeric value, if the field holds one.
    pub fn number(&self) -> Option<f64> {
        self.value.parse().ok()
    }
}

/// Renders rows as RFC 4180 CSV, header first.
pub fn csv_bytes(rows: &[Row]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([&r.method, &r.precision_setup, &r.metric, &r.value])?;
    }
    w.into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))
}

pub fn read_csv(path: &Path) -> Result<Vec<Row>> {
    let bytes = fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&bytes)
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(CliError::Config(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| CliError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)? + "\n")
}
