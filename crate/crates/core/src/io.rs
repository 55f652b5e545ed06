//! Comma-separated panel and factor files.
//!
//! The first row holds column names and the first column holds row labels
//! (dates or an index). Every other cell must be a finite decimal number;
//! blank cells are rejected rather than imputed. A column named `rf` is
//! treated as the risk-free rate: in a return file it is subtracted from
//! every asset, in a factor file it is kept aside on the [`FactorMatrix`].
//! Lines starting with `#` are comments.
//!
//! Rows and columns in error messages are 1-based file coordinates.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{FactorMatrix, ReturnPanel};

pub const RISK_FREE_COLUMN: &str = "rf";

/// Parsed numeric table with its names.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    names: Vec<String>,
    labels: Vec<String>,
    /// Row-major cells.
    values: Vec<f64>,
    risk_free: Option<Vec<f64>>,
}

impl Table {
    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.labels.len(), self.names.len(), &self.values)
    }
}

fn parse_error(row: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        row,
        col,
        msg: msg.into(),
    }
}

fn parse_table<R: Read>(source: R) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(&e))?,
        None => return Err(parse_error(1, 1, "file has no header row")),
    };
    let header_row = header.position().map_or(1, |p| p.line() as usize);
    if header.len() < 2 {
        return Err(parse_error(header_row, 1, "header needs a label column and at least one data column"));
    }

    let mut names = Vec::new();
    let mut rf_col = None;
    let mut seen = HashSet::new();
    for (c, name) in header.iter().enumerate().skip(1) {
        if name.is_empty() {
            return Err(parse_error(header_row, c + 1, "empty column name"));
        }
        if !seen.insert(name.to_string()) {
            return Err(parse_error(header_row, c + 1, format!("duplicate column name '{name}'")));
        }
        if name == RISK_FREE_COLUMN {
            rf_col = Some(c);
        } else {
            names.push(name.to_string());
        }
    }
    if names.is_empty() {
        return Err(parse_error(header_row, 2, "no data columns besides the risk-free rate"));
    }

    let width = header.len();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut risk_free = rf_col.map(|_| Vec::new());
    for rec in records {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(parse_error(
                row,
                rec.len().min(width) + 1,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        labels.push(rec[0].to_string());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            if cell.is_empty() {
                return Err(parse_error(row, c + 1, "missing value"));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_error(row, c + 1, format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(row, c + 1, format!("'{cell}' is not finite")));
            }
            if Some(c) == rf_col {
                risk_free.as_mut().expect("rf column present").push(v);
            } else {
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(parse_error(header_row + 1, 1, "file has no data rows"));
    }
    Ok(Table {
        names,
        labels,
        values,
        risk_free,
    })
}

fn csv_error(e: &csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    parse_error(row, 0, e.to_string())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Return panel from any reader; an `rf` column is subtracted.
pub fn parse_panel<R: Read>(source: R) -> Result<ReturnPanel> {
    let table = parse_table(source)?;
    let mut panel = ReturnPanel::with_names(table.matrix(), table.names, table.labels)?;
    if let Some(rf) = table.risk_free {
        panel.subtract_risk_free(&DVector::from_vec(rf))?;
    }
    Ok(panel)
}

/// Factor matrix from any reader; an `rf` column is kept as the risk-free rate.
pub fn parse_factors<R: Read>(source: R) -> Result<FactorMatrix> {
    let table = parse_table(source)?;
    let data = table.matrix();
    FactorMatrix::with_names(data, table.names, table.labels, table.risk_free.map(DVector::from_vec))
}

pub fn read_panel(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    parse_panel(open(path.as_ref())?)
}

pub fn read_factors(path: impl AsRef<Path>) -> Result<FactorMatrix> {
    parse_factors(open(path.as_ref())?)
}

/// Writes a table whose cells reparse to the same bits: `f64` display is the
/// shortest decimal that round-trips.
fn format_table(first: &str, names: &[String], labels: &[String], data: &DMatrix<f64>, rf: Option<&DVector<f64>>) -> String {
    let mut out = String::new();
    out.push_str(first);
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    if rf.is_some() {
        out.push(',');
        out.push_str(RISK_FREE_COLUMN);
    }
    out.push('\n');
    for (t, label) in labels.iter().enumerate() {
        out.push_str(label);
        for v in data.row(t).iter() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        if let Some(rf) = rf {
            out.push(',');
            out.push_str(&rf[t].to_string());
        }
        out.push('\n');
    }
    out
}

pub fn format_panel(panel: &ReturnPanel) -> String {
    format_table("date", panel.asset_names(), panel.labels(), panel.data(), None)
}

pub fn format_factors(factors: &FactorMatrix) -> String {
    format_table("date", factors.names(), factors.labels(), factors.data(), factors.risk_free())
}

fn write_string(path: &Path, prefix: &str, body: &str) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(prefix.as_bytes()).map_err(io_err)?;
    f.write_all(body.as_bytes()).map_err(io_err)
}

/// Writes `prefix` (e.g. a `#` provenance line) followed by the panel.
pub fn write_panel(path: impl AsRef<Path>, panel: &ReturnPanel, prefix: &str) -> Result<()> {
    write_string(path.as_ref(), prefix, &format_panel(panel))
}

pub fn write_factors(path: impl AsRef<Path>, factors: &FactorMatrix, prefix: &str) -> Result<()> {
    write_string(path.as_ref(), prefix, &format_factors(factors))
}
