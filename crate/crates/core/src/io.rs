//! On-disk formats for feature matrices, reference statistics and posteriors.
//!
//! `FMAT` is a little-endian binary matrix:
//!
//! ```text
//! "FMAT" | version u32 = 1 | rows u64 | cols u64 | dtype u8 (0 = f32, 1 = f64) | row-major payload
//! ```
//!
//! `GSTA` stores a Gaussian reference:
//!
//! ```text
//! "GSTA" | version u32 = 1 | dim u64 | mean (dim f64) | covariance (dim*dim f64) | n_source u64
//! ```
//!
//! CSV files hold one row per line; a first line that does not parse as
//! numbers is treated as a header. Loaders sniff the `FMAT` magic and fall
//! back to CSV otherwise. Values are always handled as `f64` once loaded.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frechet::{FeatureMatrix, GaussianStats};
use crate::inception::PosteriorMatrix;
use crate::matrix::Matrix;

pub const FMAT_MAGIC: &[u8; 4] = b"FMAT";
pub const GSTA_MAGIC: &[u8; 4] = b"GSTA";
pub const FORMAT_VERSION: u32 = 1;

const FMAT_HEADER: usize = 4 + 4 + 8 + 8 + 1;
const GSTA_HEADER: usize = 4 + 4 + 8;

/// Element type of an `FMAT` payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte buffer.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(format_error(
                self.path,
                format!("truncated {what}: expected {n} bytes, found {}", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != expected {
            return Err(format_error(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(format_error(
                self.path,
                format!("unsupported version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_error(
                self.path,
                format!("{} trailing bytes after payload", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn to_usize(path: &Path, v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| format_error(path, format!("{what} {v} does not fit in memory")))
}

/// Encodes a matrix as `FMAT`.
pub fn encode_fmat(m: &Matrix, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMAT_HEADER + m.as_slice().len() * dtype.size());
    out.extend_from_slice(FMAT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    out.push(dtype.code());
    match dtype {
        Dtype::F32 => m
            .as_slice()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => m
            .as_slice()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Decodes an `FMAT` buffer; `path` is only used in error messages.
pub fn decode_fmat(path: &Path, bytes: &[u8]) -> Result<(Matrix, Dtype)> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(FMAT_MAGIC)?;
    let rows = to_usize(path, r.u64("header")?, "row count")?;
    let cols = to_usize(path, r.u64("header")?, "column count")?;
    let dtype = match r.take(1, "header")?[0] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(format_error(path, format!("unknown dtype code {other}"))),
    };
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| format_error(path, format!("shape {rows}x{cols} overflows")))?;
    let actual = bytes.len() - r.pos;
    if actual != expected {
        return Err(format_error(
            path,
            format!("payload for {rows}x{cols} {dtype:?} needs {expected} bytes, file has {actual}"),
        ));
    }
    let payload = r.take(expected, "payload")?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: path.to_path_buf(),
            row: i / cols,
            col: i % cols,
        });
    }
    Ok((Matrix::from_vec(rows, cols, data)?, dtype))
}

pub fn save_fmat(path: impl AsRef<Path>, m: &Matrix, dtype: Dtype) -> Result<()> {
    write_file(path.as_ref(), &encode_fmat(m, dtype))
}

pub fn load_fmat(path: impl AsRef<Path>) -> Result<(Matrix, Dtype)> {
    let path = path.as_ref();
    decode_fmat(path, &read_file(path)?)
}

/// Parses CSV text. A first line that is not entirely numeric is a header.
pub fn parse_csv(path: &Path, text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("not a number: {e}"),
                })
            }
        };
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected {c} fields, found {}", values.len()),
                })
            }
            Some(_) => {}
        }
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                row: rows,
                col,
            });
        }
        data.extend(values);
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

/// Loads `FMAT` or CSV, deciding by the magic bytes.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if bytes.starts_with(FMAT_MAGIC) {
        return Ok(decode_fmat(path, &bytes)?.0);
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| format_error(path, "neither FMAT nor UTF-8 CSV"))?;
    parse_csv(path, text)
}

fn data_error(path: &Path, e: Error) -> Error {
    match e {
        Error::Format { .. } | Error::NonFinite { .. } | Error::Parse { .. } | Error::Io { .. } => e,
        other => format_error(path, other.to_string()),
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    FeatureMatrix::new(load_matrix(path)?).map_err(|e| data_error(path, e))
}

pub fn save_features(path: impl AsRef<Path>, features: &FeatureMatrix, dtype: Dtype) -> Result<()> {
    save_fmat(path, features.matrix(), dtype)
}

pub fn load_posteriors(path: impl AsRef<Path>) -> Result<PosteriorMatrix> {
    let path = path.as_ref();
    PosteriorMatrix::new(load_matrix(path)?).map_err(|e| data_error(path, e))
}

pub fn save_posteriors(path: impl AsRef<Path>, posteriors: &PosteriorMatrix, dtype: Dtype) -> Result<()> {
    save_fmat(path, posteriors.matrix(), dtype)
}

pub fn encode_gsta(stats: &GaussianStats) -> Vec<u8> {
    let d = stats.dim();
    let mut out = Vec::with_capacity(GSTA_HEADER + 8 * (d + d * d + 1));
    out.extend_from_slice(GSTA_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in stats.mean.iter().chain(stats.cov.as_slice()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&stats.n_source.to_le_bytes());
    out
}

pub fn decode_gsta(path: &Path, bytes: &[u8]) -> Result<GaussianStats> {
    let mut r = Reader { path, bytes, pos: 0 };
    r.magic(GSTA_MAGIC)?;
    let d = to_usize(path, r.u64("header")?, "dimension")?;
    let expected = d
        .checked_mul(d)
        .and_then(|dd| dd.checked_add(d + 1))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_error(path, format!("dimension {d} overflows")))?;
    let actual = bytes.len() - r.pos;
    if actual != expected {
        return Err(format_error(
            path,
            format!("payload for dimension {d} needs {expected} bytes, file has {actual}"),
        ));
    }
    let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
        Ok(r
            .take(8 * n, "payload")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let mean = read_f64s(d)?;
    let cov = read_f64s(d * d)?;
    let n_source = r.u64("n_source")?;
    r.finish()?;
    if let Some(i) = mean.iter().position(|v| !v.is_finite()) {
        return Err(format_error(path, format!("non-finite mean entry {i}")));
    }
    if let Some(i) = cov.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: path.to_path_buf(),
            row: i / d,
            col: i % d,
        });
    }
    GaussianStats::new(mean, Matrix::from_vec(d, d, cov)?, n_source).map_err(|e| data_error(path, e))
}

pub fn save_stats(path: impl AsRef<Path>, stats: &GaussianStats) -> Result<()> {
    write_file(path.as_ref(), &encode_gsta(stats))
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<GaussianStats> {
    let path = path.as_ref();
    decode_gsta(path, &read_file(path)?)
}

/// Writes rows as CSV with an optional header line.
pub fn save_csv(path: impl AsRef<Path>, header: Option<&[&str]>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| format_error(path, e.to_string());
    if let Some(h) = header {
        w.write_record(h).map_err(to_err)?;
    }
    for row in m.iter_rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| format_error(path, e.to_string()))?;
    write_file(path, &bytes)
}
