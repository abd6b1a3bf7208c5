//! CSV tables with a fixed column order and 9-significant-digit numbers.
//!
//! | file | columns |
//! |------|---------|
//! | `trajectory.csv` | `iteration, particle_id, x_1..x_d, logp_1..logp_K` |
//! | `weights.csv` | `iteration, w_1..w_K, qp_objective, kkt_margin` |
//! | `metrics.csv` | `name, value` |
//! | `timing.csv` | `phase, milliseconds` |
//! | `losses.csv` (`mtl_toy`) | `epoch, loss_1..loss_K` |
//! | `runtime.csv` (`bench_runtime`) | `method, particles, iterations, qp_solves, total_ms, ms_per_step` |
//!
//! Unavailable values (e.g. a log-density the target cannot evaluate) are
//! empty cells. Everything except `timing.csv` and `runtime.csv` is
//! byte-identical across runs with the same configuration and seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Missing,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

/// `1.23456789e-3`-style with 9 significant digits.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        // collapse −0 so output does not depend on the sign of zero
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.8e}")
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format_number(*v),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: Vec<String>) -> Self {
        Self {
            name: name.to_owned(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Looks up `value` in a two-column `name, value` table.
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.rows.iter().find_map(|r| match (&r[0], &r[1]) {
            (Cell::Text(n), Cell::Num(v)) if n == name => Some(*v),
            (Cell::Text(n), Cell::Int(v)) if n == name => Some(*v as f64),
            _ => None,
        })
    }
}

/// Writes to a temporary sibling, then renames over the target.
pub fn write_atomic(dir: &Path, table: &Table) -> Result<PathBuf, BenchError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BenchError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(format!("{}.csv", table.name));
    let tmp = dir.join(format!(".{}.csv.tmp", table.name));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(table.to_csv().as_bytes()).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, &path).map_err(io(&path))?;
    Ok(path)
}
