use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::neural::Tensor2;

/// Reads a headed numeric CSV, taking `target_column` as the target and
/// every other column as a feature.
pub fn load_csv(path: &Path, target_column: &str, delimiter: u8) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, target_column, delimiter)
}

/// Parses CSV text. Line numbers in errors count the header as line 1.
pub fn parse_csv<R: Read>(reader: R, target_column: &str, delimiter: u8) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Empty("csv header"));
    }
    let target = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::UnknownColumn(target_column.to_string()))?;
    if header.len() < 2 {
        return Err(Error::Config(format!("csv needs at least one feature column besides `{target_column}`")));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::RaggedRow { line, expected: header.len(), found: record.len() });
        }
        for (c, cell) in record.iter().enumerate() {
            let trimmed = cell.trim();
            let value = trimmed.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::MalformedCell {
                line,
                column: header[c].clone(),
                value: cell.to_string(),
            })?;
            if c == target {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Empty("csv data rows"));
    }
    let names: Vec<String> = header.iter().enumerate().filter(|&(c, _)| c != target).map(|(_, h)| h.clone()).collect();
    let x = Tensor2::from_vec(targets.len(), names.len(), features)?;
    Dataset::new(x, targets, names, target_column.to_string())
}

/// Writes features followed by the target column. Values use the shortest
/// representation that parses back to the same bits.
pub fn write_csv(dataset: &Dataset, path: &Path, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
    let mut header: Vec<&str> = dataset.feature_names().iter().map(String::as_str).collect();
    header.push(dataset.target_name());
    w.write_record(&header)?;
    let x = dataset.features();
    let mut row = Vec::with_capacity(header.len());
    for (i, y) in dataset.targets().iter().enumerate() {
        row.clear();
        row.extend(x.row(i).iter().map(f64::to_string));
        row.push(y.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
