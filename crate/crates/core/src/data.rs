//! CSV ingestion: header row, one column per series, strictly rectangular.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::path::Path;

/// A named, rectangular block of series read from CSV.
#[derive(Debug, Clone)]
pub struct SeriesTable {
    pub headers: Vec<String>,
    /// `n x k`, rows indexed by time.
    pub values: DMatrix<f64>,
}

impl SeriesTable {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in CSV header")))
    }
}

/// Read a CSV file with a header row into a matrix. Missing, empty, or
/// non-numeric cells are rejected, as are ragged rows.
pub fn read_series_csv(path: &Path) -> Result<SeriesTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let k = headers.len();
    if k == 0 {
        return Err(Error::Data(format!("{}: empty header row", path.display())));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != k {
            return Err(Error::Data(format!(
                "{}: row {} has {} cells, expected {}",
                path.display(),
                line + 2,
                record.len(),
                k
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::Data(format!(
                    "{}: missing value at row {}, column '{}'",
                    path.display(),
                    line + 2,
                    headers[j]
                )));
            }
            let value: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: non-numeric value '{}' at row {}, column '{}'",
                    path.display(),
                    cell,
                    line + 2,
                    headers[j]
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite value at row {}, column '{}'",
                    path.display(),
                    line + 2,
                    headers[j]
                )));
            }
            rows.push(value);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok(SeriesTable { headers, values: DMatrix::from_row_slice(n, k, &rows) })
}

/// Write a matrix as CSV with the given header names.
pub fn write_matrix_csv(path: &Path, headers: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(headers)?;
    for i in 0..values.nrows() {
        let row: Vec<String> = (0..values.ncols()).map(|j| format!("{}", values[(i, j)])).collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("pelkit_csv_test_{}_{}.csv", std::process::id(), content.len()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn reads_rectangular_csv() {
        let path = write_tmp("a,b\n1.0,2.0\n3.0,4.0\n");
        let table = read_series_csv(&path).unwrap();
        assert_eq!(table.headers, vec!["a", "b"]);
        assert_eq!(table.values[(1, 0)], 3.0);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn rejects_missing_and_ragged_cells() {
        let path = write_tmp("a,b\n1.0,\n");
        assert!(matches!(read_series_csv(&path), Err(Error::Data(_))));
        std::fs::remove_file(path).ok();

        let path = write_tmp("a,b\n1.0\n");
        assert!(matches!(read_series_csv(&path), Err(Error::Data(_))));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn rejects_non_numeric() {
        let path = write_tmp("a,b\n1.0,x\n");
        assert!(matches!(read_series_csv(&path), Err(Error::Data(_))));
        std::fs::remove_file(path).ok();
    }
}
