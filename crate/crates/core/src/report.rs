//! CSV output shared by every table the toolkit writes.
//!
//! Each file starts with one provenance comment line
//! (`# gamefam <version> seed=<seed> config_hash=<hash>`), followed by a
//! header row and data rows. Floats use the shortest representation that
//! round-trips, switching to exponent notation for very small or very large
//! magnitudes, so identical results give identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::TOOL_VERSION;

/// Identifies the run that produced a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Provenance { seed, config_hash: config_hash.into() }
    }

    pub fn comment_line(&self) -> String {
        format!("# {TOOL_VERSION} seed={} config_hash={}", self.seed, self.config_hash)
    }
}

/// First 16 hex digits of the SHA-256 of `value`'s canonical JSON form.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// An in-memory table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Schema(format!("row has {} fields, header has {}", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_bytes(&self, prov: &Provenance) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        writeln!(out, "{}", prov.comment_line())?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header).map_err(csv_err)?;
            for row in &self.rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>, prov: &Provenance) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes(prov)?)?;
        Ok(())
    }

    /// Parse a table written by [`Table::write`], checking the header.
    pub fn read(path: impl AsRef<Path>, expected_header: &[&str]) -> Result<(String, Table)> {
        let text = fs::read_to_string(path)?;
        let (comment, body) = text.split_once('\n').unwrap_or((&text, ""));
        if !comment.starts_with('#') {
            return Err(Error::Schema("missing provenance comment line".into()));
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header != expected_header {
            return Err(Error::Schema(format!("unexpected header {header:?}, expected {expected_header:?}")));
        }
        let mut table = Table { header, rows: Vec::new() };
        for rec in r.records() {
            table.push(rec.map_err(csv_err)?.iter().map(String::from).collect())?;
        }
        Ok((comment.to_string(), table))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(e.to_string())
}

/// `sigma_1 .. sigma_n` column names.
pub fn sigma_columns(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("sigma_{j}")).collect()
}
