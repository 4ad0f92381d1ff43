//! Output helpers: CSV/JSON emitted through a temporary file and a rename, so
//! readers never observe a half-written artifact.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> io::Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = f64>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row.into_iter().collect::<Vec<f64>>()).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> io::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = f64>,
{
    write_atomic(path, &csv_bytes(header, rows)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Headerless numeric CSV, one row per line.
pub fn read_matrix_csv(path: &Path) -> io::Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(io::Error::other)?;
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(io::Error::other)?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("{}: line {}: {e}", path.display(), line + 1))
                })
            })
            .collect::<io::Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
