use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Dirichlet concentrations `gamma = exp(lambda)` for every subject and taxon.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaField {
    pub gamma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

/// Log-linear concentrations: `lambda[i, j] = alpha[j] + sum_p zeta[j, p] phi[j, p] x[i, p]`.
///
/// Fails with the offending location if any concentration is not a finite,
/// strictly positive number.
pub fn build_gamma(
    alpha: &DVector<f64>,
    phi: &DMatrix<f64>,
    zeta: &DMatrix<bool>,
    x: &DMatrix<f64>,
) -> Result<GammaField> {
    let (n, p) = x.shape();
    let j = alpha.len();
    if phi.shape() != (j, p) {
        return Err(Error::Dimension {
            what: "phi shape (J*P)",
            expected: j * p,
            actual: phi.nrows() * phi.ncols(),
        });
    }
    if zeta.shape() != (j, p) {
        return Err(Error::Dimension {
            what: "zeta shape (J*P)",
            expected: j * p,
            actual: zeta.nrows() * zeta.ncols(),
        });
    }
    let mut lambda = DMatrix::zeros(n, j);
    for t in 0..j {
        for i in 0..n {
            let mut eta = alpha[t];
            for q in 0..p {
                if zeta[(t, q)] {
                    eta += phi[(t, q)] * x[(i, q)];
                }
            }
            lambda[(i, t)] = eta;
        }
    }
    let gamma = lambda.map(f64::exp);
    for t in 0..j {
        for i in 0..n {
            let g = gamma[(i, t)];
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::NonFinite {
                    what: "Dirichlet concentration",
                    row: i,
                    col: t,
                });
            }
        }
    }
    Ok(GammaField { gamma, lambda })
}

/// Log of the augmented Dirichlet-multinomial integrand for one subject:
///
/// ```text
/// (zdot - 1) ln u - T u + sum_j [ (z_j + gamma_j - 1) ln c_j - c_j - ln Gamma(gamma_j) ]
/// ```
///
/// with `T = sum_j c_j`. The constants `ln Gamma(zdot)` and the multinomial
/// coefficient are dropped; they do not depend on `(c, gamma, u)`.
pub fn log_augmented_dm(z_row: &[u32], c_row: &[f64], gamma_row: &[f64], u: f64) -> Result<f64> {
    let j = z_row.len();
    if c_row.len() != j || gamma_row.len() != j {
        return Err(Error::Dimension {
            what: "augmented likelihood row",
            expected: j,
            actual: c_row.len().min(gamma_row.len()),
        });
    }
    let zdot: u64 = z_row.iter().map(|&v| u64::from(v)).sum();
    if zdot == 0 {
        return Err(Error::Domain("subject has zero total count".into()));
    }
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::Domain(format!("auxiliary u must be positive, got {u}")));
    }
    let mut total = 0.0;
    let mut t_sum = 0.0;
    for k in 0..j {
        let c = c_row[k];
        let g = gamma_row[k];
        if !(c > 0.0) || !(g > 0.0) || !c.is_finite() || !g.is_finite() {
            return Err(Error::Domain(format!(
                "c and gamma must be positive and finite (taxon {k}: c={c}, gamma={g})"
            )));
        }
        t_sum += c;
        total += (f64::from(z_row[k]) + g - 1.0) * c.ln() - c - ln_gamma(g);
    }
    total += (zdot as f64 - 1.0) * u.ln() - t_sum * u;
    Ok(total)
}
