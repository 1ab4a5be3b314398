//! CSV tables and flat `key = value` manifests for run directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Shortest round-tripping representation, in exponent form for very small
/// or very large magnitudes.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes a header and numeric rows.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "{}: row has {} fields, header has {}",
                path.display(),
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|v| num(*v))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and rows of preformatted fields.
pub fn write_text_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Sorted key-value record written next to the outputs of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn extend(&mut self, prefix: &str, map: &BTreeMap<String, String>) {
        for (k, v) in map {
            self.entries.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v.replace('\n', " "));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Manifest { entries }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// Where a run puts its files: a directory, or a single CSV path whose
/// manifest sits next to it.
#[derive(Debug, Clone)]
pub enum Destination {
    Dir(PathBuf),
    File(PathBuf),
}

impl Destination {
    pub fn from_arg(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Destination::File(path.to_path_buf())
        } else {
            Destination::Dir(path.to_path_buf())
        }
    }

    pub fn prepare(&self) -> Result<()> {
        match self {
            Destination::Dir(d) => fs::create_dir_all(d)?,
            Destination::File(f) => {
                if let Some(parent) = f.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
            }
        }
        Ok(())
    }

    /// Path for an output named `name`; a single-file destination is used for
    /// the primary output.
    pub fn file(&self, name: &str) -> PathBuf {
        match self {
            Destination::Dir(d) => d.join(name),
            Destination::File(f) => f.clone(),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        match self {
            Destination::Dir(d) => d.join("manifest.txt"),
            Destination::File(f) => f.with_extension("manifest.txt"),
        }
    }

    pub fn subdir(&self, name: &str) -> Destination {
        match self {
            Destination::Dir(d) => Destination::Dir(d.join(name)),
            Destination::File(f) => Destination::Dir(f.with_extension("").join(name)),
        }
    }
}
