use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{shuffled_partition, Dataset, SplitSizes, Splits};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-column affine map estimated on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    /// Indices of the retained columns in the original file.
    pub columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics (`ddof = 0`); columns whose spread is zero are
    /// left out.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let (mut columns, mut mean, mut std) = (Vec::new(), Vec::new(), Vec::new());
        for c in 0..cols {
            let m = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                columns.push(c);
                mean.push(m);
                std.push(s);
            }
        }
        if columns.is_empty() {
            return Err(Error::Data("every column is constant on the training split".into()));
        }
        Ok(Standardization { columns, mean, std })
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Tensor {
        let mut out = Vec::with_capacity(rows.len() * self.columns.len());
        for r in rows {
            for (k, &c) in self.columns.iter().enumerate() {
                out.push((r[c] - self.mean[k]) / self.std[k]);
            }
        }
        Tensor::matrix(rows.len(), self.columns.len(), out).expect("standardized shape")
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

/// Reads a numeric CSV. Error positions are 1-based data rows (the header is
/// not counted) and 1-based columns.
pub(crate) fn read_numeric<R: Read>(reader: R, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data(format!(
                    "non-numeric cell {cell:?} at row {}, column {}",
                    i + 1,
                    j + 1
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Data("CSV contains no data rows".into()));
    }
    Ok(rows)
}

/// Splits rows with a seeded shuffle, then standardizes every split with the
/// training statistics.
pub(crate) fn split_and_standardize(rows: Vec<Vec<f64>>, opts: &CsvOptions, source: &str) -> Result<Splits> {
    let sizes = SplitSizes::new(rows.len(), opts.validation_fraction, opts.test_fraction)?;
    let parts = shuffled_partition(rows.len(), sizes, opts.seed);
    let take = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    let [train, val, test] = [take(&parts[0]), take(&parts[1]), take(&parts[2])];
    let stats = Standardization::fit(&train)?;
    let make = |part: &[Vec<f64>], tag: &str| -> Result<Dataset> {
        Ok(Dataset::new(stats.apply(part), format!("{source}#{tag}"))?.with_standardization(stats.clone()))
    };
    Ok(Splits {
        train: make(&train, "train")?,
        val: make(&val, "val")?,
        test: make(&test, "test")?,
    })
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Splits> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let rows = read_numeric(file, opts.has_header)?;
    split_and_standardize(rows, opts, &format!("csv:{}", path.display()))
}

/// Reads a numeric CSV and maps it with previously fitted statistics, for
/// scoring new rows against a trained model.
pub fn load_csv_standardized(path: &Path, has_header: bool, stats: &Standardization) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let rows = read_numeric(file, has_header)?;
    let width = stats.columns.iter().max().map_or(0, |c| c + 1);
    if rows[0].len() < width {
        return Err(Error::Data(format!(
            "{}: {} columns, the stored statistics need at least {width}",
            path.display(),
            rows[0].len()
        )));
    }
    Ok(Dataset::new(stats.apply(&rows), format!("csv:{}", path.display()))?.with_standardization(stats.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_row_and_column_of_bad_cells() {
        let text = "a,b,c\n1,2,3\n4,5,6\n7,x,9\n";
        let err = read_numeric(text.as_bytes(), true).unwrap_err().to_string();
        assert!(err.contains("row 3, column 2"), "{err}");
        assert!(read_numeric("".as_bytes(), false).is_err());
        assert!(read_numeric("a,b\n".as_bytes(), true).is_err());
        assert!(read_numeric("1,2\n3\n".as_bytes(), false).is_err());
        assert!(read_numeric("1,nan\n".as_bytes(), false).is_err());
    }

    #[test]
    fn constant_columns_are_dropped() {
        let rows = vec![vec![1.0, 5.0, 0.0], vec![2.0, 5.0, 1.0], vec![3.0, 5.0, 4.0]];
        let s = Standardization::fit(&rows).unwrap();
        assert_eq!(s.columns, vec![0, 2]);
        assert!(Standardization::fit(&[vec![1.0], vec![1.0]]).is_err());
    }
}
