//! Result tables, CSV output and content hashes.
//!
//! A table has a leading text `label` column and numeric columns. Every
//! Monte-Carlo estimate column `<name>_mc` must be paired with `<name>_se`.
//! Floats are written in Rust's shortest round-trip form, so a parsed CSV
//! reproduces the in-memory values exactly.

use std::fs;
use std::path::{Path, PathBuf};

use sha1::{Digest, Sha1};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// File stem of the CSV.
    pub name: String,
    /// Numeric column names (the label column is implicit).
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl SweepResult {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len(), "row width for {}", self.name);
        self.rows.push(Row {
            label: label.into(),
            values,
        });
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column, in row order.
    pub fn values(&self, name: &str) -> Vec<f64> {
        let j = self.column(name).unwrap_or_else(|| panic!("no column {name} in {}", self.name));
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.rows.is_empty() {
            return Err(HarnessError::Empty(self.name.clone()));
        }
        for c in &self.columns {
            if let Some(stem) = c.strip_suffix("_mc") {
                if self.column(&format!("{stem}_se")).is_none() {
                    return Err(HarnessError::MissingSe(self.name.clone(), c.clone()));
                }
            }
        }
        if self.rows.iter().any(|r| r.values.len() != self.columns.len()) {
            return Err(HarnessError::Shape(self.name.clone()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.get(0) != Some("label") {
            return Err(HarnessError::Parse(format!("{name}: first column must be label")));
        }
        let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| HarnessError::Parse(format!("{name}: {v:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(Row {
                label: rec.get(0).unwrap_or_default().to_string(),
                values,
            });
        }
        Ok(Self {
            name: name.to_string(),
            columns,
            rows,
        })
    }

    /// Write `<dir>/<name>.csv`. Nothing is created for an invalid table.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        let text = self.to_csv()?;
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Git blob id: SHA-1 of `"blob <len>\0" + content`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
