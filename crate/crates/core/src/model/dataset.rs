use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Response, taxa counts and covariates for `N` subjects.
///
/// Counts are `N x J`, covariates `N x P`. Every subject must have at least
/// one read.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    z: DMatrix<u32>,
    x: DMatrix<f64>,
    row_totals: Vec<u64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, z: DMatrix<u32>, x: DMatrix<f64>) -> Result<Self> {
        let n = z.nrows();
        if n == 0 || z.ncols() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidData(format!(
                "N, J and P must all be at least 1 (got N={}, J={}, P={})",
                n,
                z.ncols(),
                x.ncols()
            )));
        }
        if y.len() != n {
            return Err(Error::Dimension {
                what: "response length",
                expected: n,
                actual: y.len(),
            });
        }
        if x.nrows() != n {
            return Err(Error::Dimension {
                what: "covariate rows",
                expected: n,
                actual: x.nrows(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "response",
                row: i,
                col: 0,
            });
        }
        for (k, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "covariate",
                    row: k % n,
                    col: k / n,
                });
            }
        }
        let row_totals: Vec<u64> = (0..n)
            .map(|i| z.row(i).iter().map(|&v| u64::from(v)).sum())
            .collect();
        if let Some(i) = row_totals.iter().position(|&t| t == 0) {
            return Err(Error::InvalidData(format!("subject {i} has zero total count")));
        }
        Ok(Dataset {
            y,
            z,
            x,
            row_totals,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_taxa(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<u32> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Per-subject total counts.
    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }
}

/// Centering of the response and standardization of covariates, estimated on
/// a training set and reusable on test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub y_mean: f64,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
}

impl Preprocessing {
    pub fn fit(data: &Dataset) -> Self {
        let n = data.n() as f64;
        let y_mean = data.y.sum() / n;
        let mut x_mean = Vec::with_capacity(data.n_covariates());
        let mut x_sd = Vec::with_capacity(data.n_covariates());
        for col in data.x.column_iter() {
            let m = col.sum() / n;
            let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
            let sd = if data.n() > 1 {
                (ss / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            x_mean.push(m);
            // constant columns are centered only
            x_sd.push(if sd > 0.0 { sd } else { 1.0 });
        }
        Preprocessing { y_mean, x_mean, x_sd }
    }

    /// Identity transform for `p` covariates.
    pub fn identity(p: usize) -> Self {
        Preprocessing {
            y_mean: 0.0,
            x_mean: vec![0.0; p],
            x_sd: vec![1.0; p],
        }
    }

    pub fn transform_covariates(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.x_mean.len() {
            return Err(Error::Dimension {
                what: "covariate columns",
                expected: self.x_mean.len(),
                actual: x.ncols(),
            });
        }
        let mut out = x.clone();
        for (p, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.x_mean[p]) / self.x_sd[p]);
        }
        Ok(out)
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let y = data.y.map(|v| v - self.y_mean);
        let x = self.transform_covariates(&data.x)?;
        Dataset::new(y, data.z.clone(), x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_subject() {
        let z = DMatrix::from_row_slice(2, 2, &[1, 0, 0, 0]);
        let x = DMatrix::from_element(2, 1, 0.0);
        let err = Dataset::new(DVector::zeros(2), z, x).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
    }

    #[test]
    fn rejects_length_mismatch() {
        let z = DMatrix::from_element(2, 2, 1u32);
        let x = DMatrix::from_element(2, 1, 0.0);
        assert!(matches!(
            Dataset::new(DVector::zeros(3), z, x),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn preprocessing_centers_and_scales() {
        let z = DMatrix::from_element(3, 2, 1u32);
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 6.0]);
        let d = Dataset::new(y, z, x).unwrap();
        let pre = Preprocessing::fit(&d);
        let t = pre.apply(&d).unwrap();
        assert!(t.y().sum().abs() < 1e-12);
        let c0 = t.x().column(0);
        assert!((c0[0] + 1.0).abs() < 1e-12 && (c0[2] - 1.0).abs() < 1e-12);
        assert!(t.x().column(1).iter().all(|v| *v == 0.0));
        assert_eq!(t.row_totals(), &[2, 2, 2]);
    }
}
