//! Result tables and their CSV form.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{ExpError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Header comments echoing the version and config, then the column
    /// line and rows.
    pub fn write_csv<W: Write>(&self, mut w: W, cfg: &ExperimentConfig) -> std::io::Result<()> {
        writeln!(w, "# lfd-exp {VERSION}")?;
        for (k, v) in cfg.pairs() {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| ExpError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(format!("{}.csv", self.name));
        let mut buf = Vec::new();
        self.write_csv(&mut buf, cfg).map_err(io_err(&path))?;
        std::fs::write(&path, buf).map_err(io_err(&path))?;
        Ok(path)
    }
}

/// Format a cell; missing values become an empty field.
pub fn cell<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
