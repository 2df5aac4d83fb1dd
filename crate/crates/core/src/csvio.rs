//! Shared helpers for the box-oriented CSV formats.

use thiserror::Error;

/// A rejected CSV document or row. `line` is the 1-based physical line.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("empty file")]
    Empty,
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {line}: {message}")]
    Row { line: u64, message: String },
}

pub(crate) struct Rows {
    pub(crate) records: Vec<(u64, csv::StringRecord)>,
}

/// Reads a headed CSV document, checking the header matches `expected` exactly
/// and every row has the same arity.
pub(crate) fn read(text: &str, expected: &[&str]) -> Result<Rows, CsvError> {
    if text.trim().is_empty() {
        return Err(CsvError::Empty);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CsvError::Row {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(CsvError::Header {
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| CsvError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(CsvError::Row {
                line,
                message: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        records.push((line, record));
    }
    Ok(Rows { records })
}

pub(crate) fn text_field(line: u64, record: &csv::StringRecord, idx: usize, name: &str) -> Result<String, CsvError> {
    let value = &record[idx];
    if value.is_empty() {
        return Err(CsvError::Row {
            line,
            message: format!("empty `{name}`"),
        });
    }
    Ok(value.to_string())
}

pub(crate) fn num_field(line: u64, record: &csv::StringRecord, idx: usize, name: &str) -> Result<f64, CsvError> {
    let raw = &record[idx];
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CsvError::Row {
            line,
            message: format!("non-numeric `{name}`: `{raw}`"),
        }),
    }
}

/// Quotes a free-text field when needed.
pub(crate) fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) || field.trim() != field {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
