//! CSV and float-formatting helpers shared by the CLI and the report
//! writers. Reals are printed with 17 significant digits so a written
//! value parses back to the identical f64.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::densela::DenseMatrix;

/// Shortest-exact decimal: 17 significant digits round-trip any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes an RFC-4180-style CSV with a mandatory header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

/// Writes a matrix as CSV, one row per line, no header.
pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> io::Result<()> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let mut first = true;
        for j in 0..m.cols() {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{}", format_f64(m[(i, j)]));
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out)
}

/// Reads a headerless numeric CSV back into a matrix.
pub fn read_matrix_csv(path: &Path) -> io::Result<DenseMatrix> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|tok| tok.trim().parse()).collect();
        let row = row.map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", lineno + 1))
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "empty matrix file"));
    }
    DenseMatrix::from_rows(&rows)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}
