//! CSV data files and `key = value` provenance files.
//!
//! Data CSVs carry a header of feature names and one observation per row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cst_core::DataMatrix;
use nalgebra::{DMatrix, DVector};

use crate::error::{AppError, AppResult};

fn open_reader(path: &Path) -> AppResult<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> AppError {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let msg = e.to_string();
            match e.into_kind() {
                csv::ErrorKind::Io(io) => AppError::io(path, io),
                _ => AppError::data(path, msg),
            }
        }
        _ => AppError::data(path, e.to_string()),
    }
}

/// Header plus numeric rows. Row numbers in errors are 1-based file lines.
fn read_numeric(path: &Path) -> AppResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = open_reader(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(AppError::data(path, "missing header row"));
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(idx as u64 + 2, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        AppError::data(
                            path,
                            format!(
                                "line {line}, column {} ('{}'): not a finite number: '{cell}'",
                                col + 1,
                                header[col]
                            ),
                        )
                    })
            })
            .collect::<AppResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(AppError::data(path, "no data rows"));
    }
    Ok((header, rows))
}

pub fn read_data(path: &Path) -> AppResult<DataMatrix> {
    let (header, rows) = read_numeric(path)?;
    let data = DataMatrix::from_samples(&rows).map_err(|e| AppError::data(path, e.to_string()))?;
    data.with_feature_names(header)
        .map_err(|e| AppError::data(path, e.to_string()))
}

/// A single-column target file with a header.
pub fn read_targets(path: &Path) -> AppResult<DVector<f64>> {
    let (header, rows) = read_numeric(path)?;
    if header.len() != 1 {
        return Err(AppError::data(
            path,
            format!("expected one target column, found {}", header.len()),
        ));
    }
    Ok(DVector::from_iterator(
        rows.len(),
        rows.into_iter().map(|r| r[0]),
    ))
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Writes the columns of a `D × T` matrix as `T` rows under `header`.
pub fn write_columns_csv(path: &Path, header: &[String], values: &DMatrix<f64>) -> AppResult<()> {
    write_text(path, &columns_csv(header, values))
}

pub fn columns_csv(header: &[String], values: &DMatrix<f64>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for col in values.column_iter() {
        let cells: Vec<String> = col.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_data(path: &Path, data: &DataMatrix) -> AppResult<()> {
    let header: Vec<String> = match data.feature_names() {
        Some(names) => names.to_vec(),
        None => (0..data.n_features()).map(|i| format!("f{i}")).collect(),
    };
    write_columns_csv(path, &header, data.values())
}

pub fn write_targets(path: &Path, targets: &DVector<f64>) -> AppResult<()> {
    let mut out = String::from("target\n");
    for v in targets.iter() {
        let _ = writeln!(out, "{v}");
    }
    write_text(path, &out)
}

/// `key = value` lines; values must be single-line.
pub fn format_kv(entries: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k} = {}", v.replace('\n', " "));
    }
    out
}

pub fn write_kv(path: &Path, entries: &[(String, String)]) -> AppResult<()> {
    write_text(path, &format_kv(entries))
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value', got '{line}'", i + 1))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> AppResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_kv(&text).map_err(|m| AppError::data(path, m))
}
