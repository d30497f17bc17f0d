//! CSV/JSON writers shared by the library surfaces and the CLI.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Nine significant digits in scientific notation.
pub fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Column-oriented table written as RFC-4180 CSV or as a JSON object of arrays.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Columns holding indices or counts, written without a fraction.
    #[serde(skip)]
    pub integer: Vec<bool>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            integer: Vec::new(),
        }
    }

    /// Marks the named columns as integer valued.
    pub fn with_integers(mut self, names: &[&str]) -> Self {
        self.integer = self
            .columns
            .iter()
            .map(|c| names.contains(&c.as_str()))
            .collect();
        self
    }

    fn is_integer(&self, k: usize) -> bool {
        self.integer.get(k).copied().unwrap_or(false)
    }

    fn cell(&self, k: usize, v: f64) -> String {
        if self.is_integer(k) {
            format!("{v:.0}")
        } else {
            fmt9(v)
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().enumerate().map(|(k, &v)| self.cell(k, v)))?;
        }
        w.flush()
    }

    /// `{"column": [values...], ...}` with values rounded to nine significant
    /// digits so that CSV and JSON carry identical numbers.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (k, name) in self.columns.iter().enumerate() {
            let col: Vec<serde_json::Value> = self
                .rows
                .iter()
                .map(|r| match self.is_integer(k) {
                    true => serde_json::Value::from(r[k] as i64),
                    false => json_number(round9(r[k])),
                })
                .collect();
            obj.insert(name.clone(), serde_json::Value::Array(col));
        }
        serde_json::Value::Object(obj)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub(crate) fn round9(x: f64) -> f64 {
    fmt9(x).parse().unwrap_or(x)
}

fn json_number(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// Output format selected by the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `table` as `<stem>.csv` or `<stem>.json` under `dir`.
pub fn write_table(dir: &Path, stem: &str, table: &Table, format: Format) -> Result<PathBuf> {
    let path = match format {
        Format::Csv => dir.join(format!("{stem}.csv")),
        Format::Json => dir.join(format!("{stem}.json")),
    };
    let mut out = create(&path)?;
    match format {
        Format::Csv => table.write_csv(&mut out),
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &table.to_json()).map_err(std::io::Error::other)
        }
    }
    .and_then(|_| out.flush())
    .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::other)
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(0.541_341_132_946_451), "5.41341133e-1");
        assert_eq!(fmt9(0.0), "0.00000000e0");
        assert_eq!(fmt9(-12.5), "-1.25000000e1");
    }

    #[test]
    fn csv_and_json_agree() {
        let mut t = Table::new(["t", "n"]);
        t.push(vec![0.001, 1.0 / 3.0]);
        t.push(vec![0.002, 2.0 / 3.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let json = t.to_json();
        for (k, line) in text.lines().skip(1).enumerate() {
            let n_csv: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(n_csv, json["n"][k].as_f64().unwrap());
        }
    }

    #[test]
    fn integer_columns_have_no_fraction() {
        let mut t = Table::new(["trajectory", "max_shift"]).with_integers(&["trajectory"]);
        t.push(vec![12.0, 0.25]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "trajectory,max_shift\n12,2.50000000e-1\n"
        );
        assert_eq!(t.to_json()["trajectory"][0], serde_json::json!(12));
    }
}
