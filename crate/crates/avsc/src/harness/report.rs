//! CSV report emission. Floats are written at 17 significant digits so the
//! files parse back to the exact same values.

use crate::error::Result;
use std::path::Path;

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A report table: comment metadata lines, a header, and string rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub title: String,
    pub meta: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.title));
        for m in &self.meta {
            out.push_str(&format!("# {m}\n"));
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Data rows of a CSV produced by `to_csv` (comments and header dropped).
    pub fn parse_rows(csv: &str) -> Vec<Vec<String>> {
        csv.lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .skip(1)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    }
}
