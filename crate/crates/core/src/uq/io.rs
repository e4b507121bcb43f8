//! Binary matrix files and plain-text sidecars.
//!
//! Matrix layout: magic `ROMX`, `u32` version 1, `u64` rows, `u64` cols, then
//! `rows·cols` little-endian `f64` values in column-major order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ROMX";
const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|_| format_err(path, "truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
    let count = rows
        .checked_mul(cols)
        .filter(|c| c.checked_mul(8).is_some_and(|b| b + HEADER_LEN as u64 == len))
        .ok_or_else(|| format_err(path, format!("{rows}×{cols} does not match file size {len}")))?;
    let mut data = Vec::with_capacity(count as usize);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|_| format_err(path, "truncated data"))?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok(DMatrix::from_vec(rows as usize, cols as usize, data))
}

/// Writes `key=value` lines in key order.
pub fn write_sidecar(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    parse_key_values(&text).map_err(|reason| format_err(path, reason))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", no + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn write_indices(path: &Path, idx: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in idx {
        writeln!(w, "{i}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().map_err(|_| format_err(path, format!("bad index {l:?}"))))
        .collect()
}

/// Comma-separated table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
