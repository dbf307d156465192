//! Collapsed marginal of the response.
//!
//! With the intercept, regression coefficients and error variance integrated
//! out, `Y ~ t_{2 a0}(0, (b0 / a0) (I + h_alpha0 1 1' + h_beta B B'))`. The
//! covariance is identity plus a rank `k + 1` term, so determinant and
//! quadratic form are obtained from a `(k + 1) x (k + 1)` Cholesky factor.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::Hyperparams;
use crate::error::{Error, Result};

/// Log density of `y` given the selected balance columns `b_sel` (`n x k`, `k` may be 0).
pub fn log_marginal_y(y: &DVector<f64>, b_sel: &DMatrix<f64>, hyper: &Hyperparams) -> Result<f64> {
    if b_sel.nrows() != y.len() && b_sel.ncols() > 0 {
        return Err(Error::Dimension {
            what: "balance rows",
            expected: y.len(),
            actual: b_sel.nrows(),
        });
    }
    let cols: Vec<usize> = (0..b_sel.ncols()).collect();
    log_marginal_y_columns(y, b_sel, &cols, hyper)
}

/// As [`log_marginal_y`], using the columns of `b` listed in `selected`.
pub fn log_marginal_y_columns(
    y: &DVector<f64>,
    b: &DMatrix<f64>,
    selected: &[usize],
    hyper: &Hyperparams,
) -> Result<f64> {
    let n = y.len();
    let k = selected.len();
    if k > 0 && b.nrows() != n {
        return Err(Error::Dimension {
            what: "balance rows",
            expected: n,
            actual: b.nrows(),
        });
    }
    let sa = hyper.h_alpha0.sqrt();
    let sb = hyper.h_beta.sqrt();
    // W = [sa * 1, sb * B_sel]; G = I + W'W, w = W'y
    let dim = k + 1;
    let mut g = DMatrix::<f64>::identity(dim, dim);
    let mut w = DVector::<f64>::zeros(dim);
    let y_sum = y.sum();
    g[(0, 0)] += sa * sa * n as f64;
    w[0] = sa * y_sum;
    for (a, &ca) in selected.iter().enumerate() {
        let col_a = b.column(ca);
        let s = col_a.sum();
        g[(0, a + 1)] += sa * sb * s;
        g[(a + 1, 0)] = g[(0, a + 1)];
        w[a + 1] = sb * col_a.dot(y);
        for (bi, &cb) in selected.iter().enumerate().skip(a) {
            let d = if ca == cb { col_a.norm_squared() } else { col_a.dot(&b.column(cb)) };
            g[(a + 1, bi + 1)] += sb * sb * d;
            g[(bi + 1, a + 1)] = g[(a + 1, bi + 1)];
        }
    }
    let chol = Cholesky::new(g).ok_or(Error::NotPositiveDefinite)?;
    let log_det_sigma: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let solved = chol.solve(&w);
    let quad = y.norm_squared() - w.dot(&solved);
    if !(quad >= -1e-8 * y.norm_squared().max(1.0)) || !log_det_sigma.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(student_t_log_density(n, hyper.a0, hyper.b0, log_det_sigma, quad.max(0.0)))
}

/// `t_{2 a0}(0, (b0/a0) Sigma)` log density given `ln|Sigma|` and `y' Sigma^{-1} y`.
pub(crate) fn student_t_log_density(n: usize, a0: f64, b0: f64, log_det_sigma: f64, quad: f64) -> f64 {
    let nu = 2.0 * a0;
    let nf = n as f64;
    let scale = b0 / a0;
    let log_det = nf * scale.ln() + log_det_sigma;
    // y' S^{-1} y / nu = quad / (2 b0)
    ln_gamma((nu + nf) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * nf * (nu * PI).ln() - 0.5 * log_det
        - 0.5 * (nu + nf) * (quad / (2.0 * b0)).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(h_alpha0: f64, h_beta: f64, a0: f64, b0: f64) -> Hyperparams {
        Hyperparams {
            h_alpha0,
            h_beta,
            a0,
            b0,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn univariate_t_value() {
        let y = DVector::from_element(1, 0.0);
        let v = log_marginal_y(&y, &DMatrix::zeros(1, 0), &hyper(1.0, 1.0, 2.0, 2.0)).unwrap();
        // t_4 with scale^2 = 2 at 0: lnG(2.5) - lnG(2) - 0.5 ln(4 pi) - 0.5 ln 2
        let oracle = ln_gamma(2.5) - 0.5 * (4.0 * PI).ln() - 0.5 * 2f64.ln();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v + 1.327_45).abs() < 1e-4);
    }

    #[test]
    fn zero_column_is_inert() {
        let y = DVector::from_vec(vec![0.3, -1.2, 0.9]);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -0.5, 0.2]);
        let mut b2 = DMatrix::zeros(3, 2);
        b2.set_column(0, &b.column(0));
        let h = hyper(1.0, 2.0, 2.0, 3.0);
        let v1 = log_marginal_y(&y, &b, &h).unwrap();
        let v2 = log_marginal_y(&y, &b2, &h).unwrap();
        assert!((v1 - v2).abs() < 1e-13);
    }

    #[test]
    fn row_mismatch_is_an_error() {
        let y = DVector::from_vec(vec![0.3, -1.2, 0.9]);
        assert!(log_marginal_y(&y, &DMatrix::zeros(2, 1), &Hyperparams::default()).is_err());
    }
}
