use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table of floats with a header row.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Parses a table written by [`Table::to_csv`].
pub fn parse_csv(text: &str) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Manifest("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Manifest(format!("CSV line {}: {e}", i + 2)))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(CliError::Manifest(format!(
                "CSV line {}: expected {} columns, found {}",
                i + 2,
                header.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Output directory for one run.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(CliError::io(root))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> CliResult<PathBuf> {
        let p = self.root.join(name);
        fs::create_dir_all(&p).map_err(CliError::io(&p))?;
        Ok(p)
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text).map_err(CliError::io(&p))?;
        Ok(p)
    }

    pub fn write_table(&self, name: &str, table: &Table) -> CliResult<PathBuf> {
        self.write_text(name, &table.to_csv())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Manifest(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_round_trips_bit_exactly(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
            let mut t = Table::new(&["a"]);
            for &v in &vals {
                t.push(vec![v]);
            }
            let (_, rows) = parse_csv(&t.to_csv()).unwrap();
            for (r, v) in rows.iter().zip(&vals) {
                prop_assert_eq!(r[0].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn header_and_width_are_checked() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("a,b\n1.0\n").is_err());
        let (h, r) = parse_csv("t,m\n0,1.5\n").unwrap();
        assert_eq!(h, ["t", "m"]);
        assert_eq!(r, vec![vec![0.0, 1.5]]);
    }
}
