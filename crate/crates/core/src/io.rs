//! File formats: CSV series with JSON sidecars, single-column sample files,
//! scheme text files and the binary operator container.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 digest.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// First eight bytes of the SHA-256 digest, little endian.
pub fn hash64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Decimal text with 17 significant digits, which round-trips every `f64`.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn ctx(e: impl std::fmt::Display, path: &Path) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

/// Numeric CSV with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| ctx(e, path))?;
    w.write_record(header).map_err(|e| ctx(e, path))?;
    for row in rows {
        w.write_record(row.iter().map(|&x| fmt17(x))).map_err(|e| ctx(e, path))?;
    }
    w.flush()?;
    Ok(())
}

/// Header and rows of a numeric CSV.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ctx(e, path))?;
    let header = r.headers().map_err(|e| ctx(e, path))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ctx(e, path))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| ctx(e, path)))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| ctx(e, path))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ctx(e, path))
}

/// `foo.csv` -> `foo.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Single-column CSV plus a JSON sidecar. Returns both paths.
pub fn write_column(path: &Path, name: &str, values: &[f64], sidecar: &serde_json::Value) -> Result<[PathBuf; 2]> {
    write_csv(path, &[name], values.iter().map(|&v| vec![v]))?;
    let side = sidecar_path(path);
    write_json(&side, sidecar)?;
    Ok([path.to_path_buf(), side])
}

pub fn read_column(path: &Path) -> Result<Vec<f64>> {
    let (_, rows) = read_csv(path)?;
    rows.into_iter()
        .map(|r| r.first().copied().ok_or_else(|| Error::domain(format!("{}: empty row", path.display()))))
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes)?;
    Ok(())
}
