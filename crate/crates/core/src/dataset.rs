//! Dataset ingestion: an immutable n x L numeric matrix with named columns.
//!
//! CSV dialect: comma separated, `.` decimal point, UTF-8, header row,
//! no quoting of numeric cells.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::util::fnv1a64;

/// An immutable numeric dataset. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset, enforcing the structural invariants: at least two rows,
    /// at least one column, every entry finite, unique column names.
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        let (n, l) = values.shape();
        if l < 1 {
            return Err(Error::InvalidInput("dataset needs at least 1 column".into()));
        }
        if n < 2 {
            return Err(Error::InvalidInput("dataset needs at least 2 rows".into()));
        }
        if column_names.len() != l {
            return Err(Error::InvalidInput(format!(
                "{} column names for {} columns",
                column_names.len(),
                l
            )));
        }
        for (j, name) in column_names.iter().enumerate() {
            if column_names[..j].contains(name) {
                return Err(Error::CsvFormat(format!("duplicate column name `{name}`")));
            }
        }
        if let Some((i, j)) = first_nonfinite(&values) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at row {}, column {}",
                i + 1,
                j + 1
            )));
        }
        Ok(Dataset {
            values,
            column_names,
        })
    }

    /// Convenience constructor with default column names `X1..XL`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = (1..=values.ncols()).map(|j| format!("X{j}")).collect();
        Dataset::new(values, names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of variables (columns).
    pub fn l(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Copy of the columns `cols`, in the given order.
    pub fn restrict(&self, cols: &[usize]) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, cols.len(), |i, j| self.values[(i, cols[j])])
    }

    /// Stable content hash over shape, names and value bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut buf = Vec::with_capacity(16 + self.values.len() * 8);
        buf.extend_from_slice(&(self.n() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.l() as u64).to_le_bytes());
        for name in &self.column_names {
            buf.extend_from_slice(name.as_bytes());
            buf.push(0);
        }
        for i in 0..self.n() {
            for j in 0..self.l() {
                buf.extend_from_slice(&self.values[(i, j)].to_bits().to_le_bytes());
            }
        }
        fnv1a64(&buf)
    }

    /// Load a dataset from a CSV file.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        Self::read_csv_from(file)
    }

    pub fn read_csv_from(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::CsvFormat(e.to_string()))?
            .iter()
            .map(|s| s.to_string())
            .collect();
        if headers.is_empty() {
            return Err(Error::CsvFormat("empty header row".into()));
        }
        for (j, name) in headers.iter().enumerate() {
            if headers[..j].contains(name) {
                return Err(Error::CsvFormat(format!("duplicate column name `{name}`")));
            }
        }

        let l = headers.len();
        let mut data: Vec<f64> = Vec::new();
        // File rows are 1-based and the header is row 1.
        for (rec_idx, record) in rdr.records().enumerate() {
            let row = rec_idx + 2;
            let record = record.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { len, .. } => Error::CsvFormat(format!(
                    "row {row} has {len} fields, expected {l}"
                )),
                _ => Error::CsvFormat(e.to_string()),
            })?;
            for (j, cell) in record.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::CsvParse {
                    row,
                    column: j + 1,
                    message: format!("cannot parse `{cell}` as a real number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::CsvParse {
                        row,
                        column: j + 1,
                        message: format!("non-finite value `{cell}`"),
                    });
                }
                data.push(v);
            }
        }
        if data.is_empty() {
            return Err(Error::CsvFormat("no data rows".into()));
        }
        let n = data.len() / l;
        let values = DMatrix::from_row_slice(n, l, &data);
        Dataset::new(values, headers)
    }

    /// Write the dataset as CSV. Values use Rust's shortest round-trip float
    /// formatting, so a write/read cycle reproduces the matrix bit for bit.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = File::create(path.as_ref())?;
        self.write_csv_to(&mut file)
    }

    pub fn write_csv_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", self.column_names.join(","))?;
        let mut line = String::new();
        for i in 0..self.n() {
            line.clear();
            for j in 0..self.l() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&self.values[(i, j)].to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn first_nonfinite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// Read a single-column label file: a `label` header followed by one
/// non-negative integer per row.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let content = std::fs::read_to_string(path.as_ref())?;
    let mut labels = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<usize>() {
            Ok(v) => labels.push(v),
            Err(_) if idx == 0 => continue, // header row
            Err(_) => {
                return Err(Error::CsvParse {
                    row: idx + 1,
                    column: 1,
                    message: format!("cannot parse `{line}` as a label"),
                })
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::CsvFormat("no labels found".into()));
    }
    Ok(labels)
}

/// Write labels in the format `read_labels` accepts.
pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut file = File::create(path.as_ref())?;
    writeln!(file, "label")?;
    for l in labels {
        writeln!(file, "{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingests_zeros() {
        let csv = "a,b\n0,0\n0,0\n0,0\n";
        let ds = Dataset::read_csv_from(csv.as_bytes()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.l(), 2);
        assert!(ds.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parse_error_names_location() {
        let csv = "a,b\nabc,1\n2,3\n";
        let err = Dataset::read_csv_from(csv.as_bytes()).unwrap_err();
        match err {
            Error::CsvParse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ragged_row_rejected() {
        let csv = "a,b\n1,2\n3\n";
        let err = Dataset::read_csv_from(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::CsvFormat(_)));
    }

    #[test]
    fn duplicate_header_rejected() {
        let csv = "a,a\n1,2\n3,4\n";
        let err = Dataset::read_csv_from(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::CsvFormat(_)));
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let m = DMatrix::from_row_slice(
            3,
            2,
            &[0.1, -1.0 / 3.0, 1e-12, 123456.789_f64, 2.0_f64.sqrt(), -0.0],
        );
        let ds = Dataset::from_matrix(m).unwrap();
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let back = Dataset::read_csv_from(buf.as_slice()).unwrap();
        for (a, b) in ds.values().iter().zip(back.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(ds.fingerprint(), back.fingerprint());
    }

    #[test]
    fn labels_round_trip() {
        let dir = std::env::temp_dir().join(format!("bmx_labels_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels.csv");
        write_labels(&path, &[0, 1, 1, 2]).unwrap();
        assert_eq!(read_labels(&path).unwrap(), vec![0, 1, 1, 2]);
        std::fs::remove_dir_all(&dir).ok();
    }
}
