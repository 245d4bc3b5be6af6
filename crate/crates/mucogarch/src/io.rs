//! Parameter JSON documents and return CSV files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_model::{LevySpec, MucogarchParams};
use crate::simulate::ReturnsSample;

/// Model, driver and sampling interval; matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub d: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "sigma_W")]
    pub sigma_w: f64,
    #[serde(rename = "cpp_rate")]
    pub cpp_rate: f64,
    #[serde(rename = "jump_scale")]
    pub jump_scale: f64,
    pub delta: f64,
}

fn to_matrix(name: &str, rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeError(format!("{name} must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ParamsFile {
    pub fn from_parts(p: &MucogarchParams, levy: &LevySpec, delta: f64) -> Self {
        Self {
            d: p.d(),
            a: to_rows(&p.a),
            b: to_rows(&p.b),
            c: to_rows(&p.c),
            sigma_w: levy.sigma_w,
            cpp_rate: levy.cpp_rate,
            jump_scale: levy.jump_scale,
            delta,
        }
    }

    pub fn params(&self) -> Result<MucogarchParams> {
        MucogarchParams::new(to_matrix("A", &self.a, self.d)?, to_matrix("B", &self.b, self.d)?, to_matrix("C", &self.c, self.d)?)
    }

    pub fn levy(&self) -> Result<LevySpec> {
        LevySpec::new(self.sigma_w, self.cpp_rate, self.jump_scale)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Returns CSV: one row per interval, optional header; a leading `t` column is dropped.
pub fn read_returns_csv(path: &Path, delta: f64) -> Result<ReturnsSample> {
    let text = fs::read_to_string(path)?;
    parse_returns_csv(&text, delta)
}

pub fn parse_returns_csv(text: &str, delta: f64) -> Result<ReturnsSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skip_first = false;
    let mut width = None;
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && width.is_none() => {
                // header
                skip_first = rec.get(0).is_some_and(|h| h.eq_ignore_ascii_case("t") || h.eq_ignore_ascii_case("time"));
                width = Some(rec.len());
                continue;
            }
            Err(e) => return Err(Error::Parse { line, msg: e.to_string() }),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse { line, msg: "non-finite value".into() });
        }
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::Parse { line, msg: format!("expected {w} fields, found {}", values.len()) })
            }
            _ => width = Some(values.len()),
        }
        rows.push(if skip_first { values[1..].to_vec() } else { values });
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no data rows".into() });
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::Parse { line: 1, msg: "no return columns".into() });
    }
    let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    ReturnsSample::new(delta, m)
}

/// Writes `t,g1,...,gd` with t the end of each interval.
pub fn write_returns_csv(path: &Path, sample: &ReturnsSample) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=sample.d).map(|j| format!("g{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..sample.n() {
        let mut rec = vec![format_float((i + 1) as f64 * sample.delta)];
        rec.extend(sample.returns.row(i).iter().map(|&x| format_float(x)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same value.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, msg: format!("{other:?}") },
    }
}
