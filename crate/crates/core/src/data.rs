//! Feature matrices and their CSV representation.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// An `N × D` matrix of observed covariates together with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::Mismatch(format!(
                "{} column names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        Ok(FeatureMatrix { values, names })
    }

    /// Columns named `x1, x2, ...`.
    pub fn from_array(values: Array2<f64>) -> Self {
        let names = (1..=values.ncols()).map(|j| format!("x{j}")).collect();
        FeatureMatrix { values, names }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), rows),
            names: self.names.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(1), cols),
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for ((i, j), v) in self.values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite value {v} at row {i}, column `{}`",
                    self.names[j]
                )));
            }
        }
        Ok(())
    }

    /// Column means.
    pub fn column_means(&self) -> Array1<f64> {
        self.values.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(self.n_cols()))
    }

    /// Sample covariance with `N - 1` denominator.
    pub fn covariance(&self) -> Array2<f64> {
        covariance(self.values.view())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| csv_error(path, 0, "-", e.to_string()))?;
        Self::read_csv_from(file, path)
    }

    /// Parse CSV text from any reader; `path` only labels errors.
    pub fn read_csv_from<R: std::io::Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(path, 1, "-", e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if names.is_empty() {
            return Err(csv_error(path, 1, "-", "empty header row"));
        }
        let d = names.len();
        let mut flat = Vec::new();
        let mut n = 0;
        for (idx, rec) in rdr.records().enumerate() {
            // row numbers are 1-based and count the header line
            let row = idx + 2;
            let rec = rec.map_err(|e| csv_error(path, row, "-", e.to_string()))?;
            if rec.len() != d {
                return Err(csv_error(path, row, "-", format!("expected {d} fields, found {}", rec.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| csv_error(path, row, &names[j], format!("cannot parse `{field}` as a number")))?;
                if !v.is_finite() {
                    return Err(csv_error(path, row, &names[j], format!("non-finite value `{field}`")));
                }
                flat.push(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(csv_error(path, 2, "-", "no data rows"));
        }
        let values = Array2::from_shape_vec((n, d), flat).expect("row-major shape");
        FeatureMatrix::new(values, names)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, "-", e.to_string()))?;
        w.write_record(&self.names).map_err(|e| csv_error(path, 1, "-", e.to_string()))?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))
                .map_err(|e| csv_error(path, i + 2, "-", e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn covariance(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean.insert_axis(Axis(0));
    centered.t().dot(&centered) / (n as f64 - 1.0)
}

fn csv_error(path: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Read a single-column response file with a header row.
pub fn read_response_csv(path: &Path) -> Result<Array1<f64>> {
    let file = std::fs::File::open(path).map_err(|e| csv_error(path, 0, "-", e.to_string()))?;
    read_response_csv_from(file, path)
}

pub fn read_response_csv_from<R: std::io::Read>(reader: R, path: &Path) -> Result<Array1<f64>> {
    let m = FeatureMatrix::read_csv_from(reader, path)?;
    if m.n_cols() != 1 {
        return Err(csv_error(path, 1, "-", format!("response file must have one column, found {}", m.n_cols())));
    }
    Ok(m.values.column(0).to_owned())
}

pub fn write_response_csv(path: &Path, y: ArrayView1<'_, f64>, name: &str) -> Result<()> {
    let m = FeatureMatrix::new(y.to_owned().insert_axis(Axis(1)), vec![name.to_string()])?;
    m.write_csv(path)
}
