//! CSV ingestion of paired samples.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sample::PairedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Real,
    Categorical,
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Ok(Self::Real),
            "categorical" | "cat" => Ok(Self::Categorical),
            other => Err(Error::Config(format!("unknown column kind `{other}`"))),
        }
    }
}

/// Reads columns `x_col` and `y_col` of a headed CSV file.
pub fn ingest_csv(path: impl AsRef<Path>, x_col: &str, y_col: &str, kind: ColumnKind) -> Result<PairedSample> {
    ingest_reader(File::open(path)?, x_col, y_col, kind)
}

/// As [`ingest_csv`], from any reader. Line numbers count the header as line 1.
pub fn ingest_reader<R: Read>(reader: R, x_col: &str, y_col: &str, kind: ColumnKind) -> Result<PairedSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("column `{name}` not found"),
        })
    };
    let (ix, iy) = (find(x_col)?, find(y_col)?);

    let mut xs: Vec<String> = Vec::new();
    let mut ys: Vec<String> = Vec::new();
    for record in rdr.records() {
        let line = xs.len() + 2;
        let record = record.map_err(|e| csv_error(e, line))?;
        let line = record.position().map_or(line, |p| p.line() as usize);
        for (i, name, out) in [(ix, x_col, &mut xs), (iy, y_col, &mut ys)] {
            match record.get(i) {
                Some(v) if !v.is_empty() && !v.eq_ignore_ascii_case("na") => out.push(v.to_string()),
                _ => {
                    return Err(Error::MissingValue {
                        line,
                        column: name.to_string(),
                    })
                }
            }
        }
        if kind == ColumnKind::Real {
            for (v, name) in [(xs.last().unwrap(), x_col), (ys.last().unwrap(), y_col)] {
                match v.parse::<f64>() {
                    Ok(r) if r.is_finite() => {}
                    _ => {
                        return Err(Error::Parse {
                            line,
                            message: format!("column `{name}`: `{v}` is not a finite number"),
                        })
                    }
                }
            }
        }
    }
    match kind {
        ColumnKind::Real => {
            let parse = |v: &[String]| v.iter().map(|s| s.parse::<f64>().unwrap()).collect();
            PairedSample::real(parse(&xs), parse(&ys))
        }
        ColumnKind::Categorical => PairedSample::categorical(&xs, &ys),
    }
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        _ => Error::Parse { line, message },
    }
}
