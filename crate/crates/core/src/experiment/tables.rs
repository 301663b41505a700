//! CSV outputs.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! that parsing a file back yields the exact `f64` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{SweepResult, SweepRow};

pub const SWEEP_HEADER: [&str; 5] = ["eta", "noise_seed", "mean_r", "std_r", "n_discarded"];

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `header` and `rows` (already formatted) to `path`.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`write_rows`]; returns the header and the rows.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// One row per `(eta, noise seed)`, descending eta then ascending seed.
pub fn emit_sweep_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::Contract("sweep result has no rows".into()));
    }
    let mut rows: Vec<&SweepRow> = result.rows.iter().collect();
    rows.sort_by(|a, b| b.eta.total_cmp(&a.eta).then(a.noise_seed.cmp(&b.noise_seed)));
    let formatted: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format_float(r.eta),
                r.noise_seed.to_string(),
                format_float(r.mean_r),
                format_float(r.std_r),
                r.n_discarded.to_string(),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &SWEEP_HEADER, &formatted)
}

/// A parsed sweep CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCsvRow {
    pub eta: f64,
    pub noise_seed: usize,
    pub mean_r: f64,
    pub std_r: f64,
    pub n_discarded: usize,
}

fn parse<T: std::str::FromStr>(field: &str, path: &Path) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("{}: cannot parse {field:?}", path.display())))
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepCsvRow>> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    if header != SWEEP_HEADER {
        return Err(Error::Format(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    rows.iter()
        .map(|r| {
            if r.len() != 5 {
                return Err(Error::Format(format!("{}: row of {} fields", path.display(), r.len())));
            }
            Ok(SweepCsvRow {
                eta: parse(&r[0], path)?,
                noise_seed: parse(&r[1], path)?,
                mean_r: parse(&r[2], path)?,
                std_r: parse(&r[3], path)?,
                n_discarded: parse(&r[4], path)?,
            })
        })
        .collect()
}
