use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Current values of every sampled quantity.
///
/// `t` caches the row sums of `c`. In balance-only chains the
/// Dirichlet-multinomial blocks are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub alpha: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub zeta: DMatrix<bool>,
    pub c: DMatrix<f64>,
    pub u: DVector<f64>,
    pub xi: Vec<bool>,
    pub t: DVector<f64>,
}

impl ChainState {
    /// Compositions `psi[i, j] = c[i, j] / T[i]`.
    pub fn psi(&self) -> DMatrix<f64> {
        let mut psi = self.c.clone();
        for (i, mut row) in psi.row_iter_mut().enumerate() {
            let t = self.t[i];
            row.apply(|v| *v /= t);
        }
        psi
    }

    /// Number of included covariate-taxon pairs.
    pub fn n_included(&self) -> usize {
        self.zeta.iter().filter(|z| **z).count()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (k, (&z, &p)) in self.zeta.iter().zip(self.phi.iter()).enumerate() {
            if !z && p != 0.0 {
                let rows = self.zeta.nrows();
                return Err(Error::Domain(format!(
                    "phi[{}, {}] = {p} while its indicator is off",
                    k % rows,
                    k / rows
                )));
            }
        }
        if let Some(v) = self.c.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("latent c must be positive, found {v}")));
        }
        if let Some(v) = self.u.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("auxiliary u must be positive, found {v}")));
        }
        for i in 0..self.c.nrows() {
            let sum: f64 = self.c.row(i).iter().sum();
            let t = self.t[i];
            if !(t > 0.0) || ((sum - t) / t).abs() > 1e-10 {
                return Err(Error::Domain(format!(
                    "cached T[{i}] = {t} disagrees with row sum {sum}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ChainState {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 2.0]);
        ChainState {
            alpha: DVector::zeros(2),
            phi: DMatrix::zeros(2, 1),
            zeta: DMatrix::from_element(2, 1, false),
            t: DVector::from_vec(vec![4.0, 4.0]),
            c,
            u: DVector::from_element(2, 1.0),
            xi: vec![false],
        }
    }

    #[test]
    fn psi_rows_are_compositions() {
        let s = state();
        s.check_invariants().unwrap();
        let psi = s.psi();
        assert_eq!(psi[(0, 1)], 0.75);
        assert_eq!(psi[(1, 0)], 0.5);
    }

    #[test]
    fn detects_violations() {
        let mut s = state();
        s.phi[(0, 0)] = 0.4;
        assert!(s.check_invariants().is_err());
        let mut s = state();
        s.t[1] = 5.0;
        assert!(s.check_invariants().is_err());
        let mut s = state();
        s.u[0] = 0.0;
        assert!(s.check_invariants().is_err());
    }
}
