//! Out-of-sample prediction of the response and pointwise log-likelihoods.
//!
//! Test compositions are estimated from the test counts plus the posterior
//! mean concentrations, turned into balances, and standardized with the same
//! column statistics the training balances of each retained sample used.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mcmc::ChainOutput;
use crate::model::{balance_matrix, standardize_columns, zero_replace, ColumnScaling, Dataset, Hyperparams, PartitionSpec};
use crate::par;
use crate::simulation::TestSet;

/// `exp` of the posterior-mean linear predictor for each test subject.
pub fn estimate_lambda_test(chain: &ChainOutput, x_test: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s_count = chain.n_samples();
    if s_count == 0 || chain.alpha.nrows() == 0 {
        return Err(Error::InvalidData("chain has no retained composition samples".into()));
    }
    if x_test.ncols() != chain.n_covariates {
        return Err(Error::Dimension {
            what: "test covariates (P)",
            expected: chain.n_covariates,
            actual: x_test.ncols(),
        });
    }
    // the predictor is linear in (alpha, phi), so average them first
    let alpha = chain.alpha_mean();
    let phi = chain.phi_mean();
    let mut lambda = x_test * phi.transpose();
    for (i, mut row) in lambda.row_iter_mut().enumerate() {
        for (t, v) in row.iter_mut().enumerate() {
            *v = (*v + alpha[t]).exp();
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::NonFinite {
                    what: "estimated test concentration",
                    row: i,
                    col: t,
                });
            }
        }
    }
    Ok(lambda)
}

/// `(z + lambda) / sum_j (z + lambda)` row by row.
pub fn estimate_psi_test(lambda_hat: &DMatrix<f64>, z_test: &DMatrix<u32>) -> Result<DMatrix<f64>> {
    if lambda_hat.shape() != z_test.shape() {
        return Err(Error::Dimension {
            what: "test counts",
            expected: lambda_hat.len(),
            actual: z_test.len(),
        });
    }
    let mut psi = lambda_hat.zip_map(z_test, |l, z| l + f64::from(z));
    for mut row in psi.row_iter_mut() {
        let total = row.sum();
        row /= total;
    }
    Ok(psi)
}

/// Unstandardized balances of zero-replaced compositions.
pub fn raw_balances(psi: &DMatrix<f64>, spec: &PartitionSpec, delta: f64) -> Result<DMatrix<f64>> {
    let (n, j) = psi.shape();
    let mut rep = DMatrix::zeros(n, j);
    for i in 0..n {
        let row: Vec<f64> = psi.row(i).iter().copied().collect();
        let r = zero_replace(&row, delta)?;
        for t in 0..j {
            rep[(i, t)] = r[t];
        }
    }
    balance_matrix(&rep, spec, false)
}

/// Training balances of one retained sample with the statistics used to
/// standardize them (`None` when balances were used unstandardized).
pub type TrainingBalances = (DMatrix<f64>, Option<ColumnScaling>);

/// Training balances of retained sample `s`, built as the sampler built them.
pub fn sample_balances(chain: &ChainOutput, s: usize, spec: &PartitionSpec) -> Result<TrainingBalances> {
    let psi = chain
        .psi
        .get(s)
        .ok_or_else(|| Error::InvalidData(format!("chain did not keep composition sample {s}")))?;
    let mut b = raw_balances(psi, spec, chain.hyper.delta)?;
    let scaling = if chain.config.standardize_balances {
        Some(standardize_columns(&mut b)?)
    } else {
        None
    };
    Ok((b, scaling))
}

/// Fixed training balances, optionally standardized in place.
pub fn fixed_balances(raw: DMatrix<f64>, standardize: bool) -> Result<TrainingBalances> {
    let mut b = raw;
    let scaling = if standardize {
        Some(standardize_columns(&mut b)?)
    } else {
        None
    };
    Ok((b, scaling))
}

/// Predicted responses for the test subjects and fitted values for the
/// training subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub test: DVector<f64>,
    pub fitted: DVector<f64>,
    pub intercept: f64,
}

/// `(n + 1 / h_alpha0)^-1 1'y`.
pub fn intercept_estimate(y: &DVector<f64>, hyper: &Hyperparams) -> f64 {
    y.sum() / (y.len() as f64 + 1.0 / hyper.h_alpha0)
}

fn selected_columns(b: &DMatrix<f64>, xi: &[bool]) -> DMatrix<f64> {
    let idx: Vec<usize> = xi.iter().enumerate().filter(|(_, v)| **v).map(|(k, _)| k).collect();
    b.select_columns(idx.iter())
}

/// `(B'B + I / h_beta)^-1 B'y`.
pub fn ridge_coefficients(b_sel: &DMatrix<f64>, y: &DVector<f64>, h_beta: f64) -> Result<DVector<f64>> {
    let k = b_sel.ncols();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut a = b_sel.transpose() * b_sel;
    for d in 0..k {
        a[(d, d)] += 1.0 / h_beta;
    }
    let chol = a.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(&(b_sel.transpose() * y)))
}

/// Averages ridge predictions over retained samples.
///
/// `train(s)` supplies the training balances of sample `s`; `test_raw` holds
/// unstandardized test balances, which are standardized with each sample's
/// training statistics before use.
pub fn predict_with<F>(
    y: &DVector<f64>,
    hyper: &Hyperparams,
    xi: &[Vec<bool>],
    train: F,
    test_raw: &DMatrix<f64>,
) -> Result<Prediction>
where
    F: Fn(usize) -> Result<TrainingBalances> + Sync,
{
    let s_count = xi.len();
    if s_count == 0 {
        return Err(Error::InvalidData("chain has no retained samples".into()));
    }
    let intercept = intercept_estimate(y, hyper);
    let contributions = par::map_range(s_count, |s| -> Result<(DVector<f64>, DVector<f64>)> {
        let n_test = test_raw.nrows();
        if !xi[s].iter().any(|v| *v) {
            return Ok((DVector::zeros(n_test), DVector::zeros(y.len())));
        }
        let (b, scaling) = train(s)?;
        if b.nrows() != y.len() || b.ncols() != xi[s].len() || test_raw.ncols() != xi[s].len() {
            return Err(Error::Dimension {
                what: "balances per sample",
                expected: xi[s].len(),
                actual: b.ncols(),
            });
        }
        let b_sel = selected_columns(&b, &xi[s]);
        let beta = ridge_coefficients(&b_sel, y, hyper.h_beta)?;
        let mut t_sel = selected_columns(test_raw, &xi[s]);
        if let Some(sc) = &scaling {
            let cols: Vec<usize> = xi[s].iter().enumerate().filter(|(_, v)| **v).map(|(k, _)| k).collect();
            for (c, &m) in cols.iter().enumerate() {
                t_sel.column_mut(c).apply(|v| *v = sc.apply_one(m, *v));
            }
        }
        Ok((t_sel * &beta, b_sel * &beta))
    });
    let mut test = DVector::from_element(test_raw.nrows(), 0.0);
    let mut fitted = DVector::from_element(y.len(), 0.0);
    for c in contributions {
        let (t, f) = c?;
        test += t;
        fitted += f;
    }
    let sf = s_count as f64;
    test.apply(|v| *v = intercept + *v / sf);
    fitted.apply(|v| *v = intercept + *v / sf);
    Ok(Prediction { test, fitted, intercept })
}

/// Predictions from a joint chain that kept per-sample compositions.
pub fn predict_y(
    chain: &ChainOutput,
    train: &Dataset,
    test: &TestSet,
    spec: &PartitionSpec,
    hyper: &Hyperparams,
) -> Result<Prediction> {
    test.check_dims(train.n_taxa(), train.n_covariates())?;
    let lambda = estimate_lambda_test(chain, &test.x)?;
    let psi = estimate_psi_test(&lambda, &test.z)?;
    let test_raw = raw_balances(&psi, spec, hyper.delta)?;
    predict_with(train.y(), hyper, &chain.xi, |s| sample_balances(chain, s, spec), &test_raw)
}

/// Conditional posterior means of the linear-model parameters given the
/// selected balances: intercept and coefficients, plus `sigma^2`.
pub fn conditional_means(y: &DVector<f64>, b_sel: &DMatrix<f64>, hyper: &Hyperparams) -> Result<(DVector<f64>, f64)> {
    let n = y.len();
    let k = b_sel.ncols();
    let mut w = DMatrix::from_element(n, k + 1, 1.0);
    w.view_mut((0, 1), (n, k)).copy_from(b_sel);
    let mut a = w.transpose() * &w;
    a[(0, 0)] += 1.0 / hyper.h_alpha0;
    for d in 1..=k {
        a[(d, d)] += 1.0 / hyper.h_beta;
    }
    let chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let theta = chol.solve(&(w.transpose() * y));
    let a_n = hyper.a0 + n as f64 / 2.0;
    let b_n = hyper.b0 + 0.5 * (y.dot(y) - theta.dot(&(&a * &theta)));
    if !(a_n > 1.0) {
        return Err(Error::Domain(format!("posterior shape {a_n} has no mean for sigma^2")));
    }
    Ok((theta, b_n / (a_n - 1.0)))
}

/// `N x S` matrix of `log N(y_i; alpha0 + b_i' beta, sigma^2)` at the
/// conditional posterior means given each sample's balances and selection.
pub fn pointwise_loglik_with<F>(y: &DVector<f64>, hyper: &Hyperparams, xi: &[Vec<bool>], train: F) -> Result<DMatrix<f64>>
where
    F: Fn(usize) -> Result<TrainingBalances> + Sync,
{
    let n = y.len();
    let cols = par::map_range(xi.len(), |s| -> Result<Vec<f64>> {
        let b_sel = if xi[s].iter().any(|v| *v) {
            selected_columns(&train(s)?.0, &xi[s])
        } else {
            DMatrix::zeros(n, 0)
        };
        let (theta, sigma2) = conditional_means(y, &b_sel, hyper)?;
        let mean = DVector::from_element(n, theta[0]) + &b_sel * theta.rows(1, b_sel.ncols());
        Ok((0..n)
            .map(|i| crate::model::normal_logpdf(y[i] - mean[i], sigma2))
            .collect())
    });
    let mut out = DMatrix::zeros(n, xi.len());
    for (s, c) in cols.into_iter().enumerate() {
        out.column_mut(s).copy_from_slice(&c?);
    }
    Ok(out)
}

/// Pointwise log-likelihood matrix of a chain that kept per-sample compositions.
pub fn pointwise_loglik(chain: &ChainOutput, data: &Dataset, spec: &PartitionSpec) -> Result<DMatrix<f64>> {
    if !chain.mode.samples_lm() {
        return Err(Error::InvalidConfig("pointwise log-likelihood needs a chain that samples balances".into()));
    }
    pointwise_loglik_with(data.y(), &chain.hyper, &chain.xi, |s| sample_balances(chain, s, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{AcceptanceCounts, EffectSample, Mode, SamplerConfig};
    use crate::model::sbp_pivot;
    use proptest::prelude::*;

    fn chain_with(alpha: DMatrix<f64>, effects: Vec<EffectSample>, p: usize, xi: Vec<Vec<bool>>, psi: Vec<DMatrix<f64>>) -> ChainOutput {
        let s = alpha.nrows();
        let j = alpha.ncols();
        let n = psi.first().map_or(0, |m| m.nrows());
        ChainOutput {
            mode: Mode::Joint,
            config: SamplerConfig::default(),
            hyper: Hyperparams::default(),
            n_subjects: n,
            n_taxa: j,
            n_covariates: p,
            alpha,
            effects,
            u: DMatrix::zeros(s, n),
            mppi_xi: crate::mcmc::mppi(&xi),
            xi,
            psi_mean: psi.first().cloned().unwrap_or_else(|| DMatrix::zeros(0, 0)),
            psi,
            log_posterior: Vec::new(),
            acceptance: AcceptanceCounts::default(),
            mppi_zeta: DMatrix::zeros(j, p),
        }
    }

    #[test]
    fn lambda_examples() {
        let x = DMatrix::from_row_slice(2, 1, &[0.3, -1.0]);
        let c = chain_with(DMatrix::zeros(3, 2), vec![EffectSample::default(); 3], 1, vec![vec![]; 3], vec![]);
        assert!(estimate_lambda_test(&c, &x).unwrap().iter().all(|v| *v == 1.0));

        let alpha = DMatrix::from_row_slice(2, 1, &[0.0, 4f64.ln()]);
        let c = chain_with(alpha, vec![EffectSample::default(); 2], 1, vec![vec![]; 2], vec![]);
        let l = estimate_lambda_test(&c, &x).unwrap();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-12);

        // single sample reduces to build_gamma
        let alpha = DMatrix::from_row_slice(1, 2, &[0.2, -0.4]);
        let e = EffectSample { index: vec![1], value: vec![0.7] };
        let c = chain_with(alpha.clone(), vec![e.clone()], 1, vec![vec![]], vec![]);
        let (phi, zeta) = e.to_dense(2, 1);
        let g = crate::model::build_gamma(&alpha.row(0).transpose(), &phi, &zeta, &x).unwrap();
        let l = estimate_lambda_test(&c, &x).unwrap();
        assert!((l - g.gamma).abs().max() < 1e-12);

        let c = chain_with(DMatrix::from_element(1, 1, 800.0), vec![EffectSample::default()], 1, vec![vec![]], vec![]);
        assert!(matches!(estimate_lambda_test(&c, &x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn psi_examples() {
        let psi = estimate_psi_test(&DMatrix::from_element(1, 4, 1.0), &DMatrix::zeros(1, 4)).unwrap();
        assert!(psi.iter().all(|v| (*v - 0.25).abs() < 1e-15));
        let psi = estimate_psi_test(&DMatrix::from_element(1, 2, 1.0), &DMatrix::from_row_slice(1, 2, &[3, 1])).unwrap();
        assert!((psi[(0, 0)] - 2.0 / 3.0).abs() < 1e-15 && (psi[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let l = DMatrix::from_row_slice(1, 3, &[0.5, 2.0, 1.5]);
        let a = estimate_psi_test(&l, &DMatrix::zeros(1, 3)).unwrap();
        let b = estimate_psi_test(&(l * 7.0), &DMatrix::zeros(1, 3)).unwrap();
        assert!((a - b).abs().max() < 1e-15);
    }

    #[test]
    fn intercept_is_zero_for_centered_response() {
        let y = DVector::from_vec(vec![1.0, -2.0, 1.0]);
        assert_eq!(intercept_estimate(&y, &Hyperparams::default()), 0.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!((intercept_estimate(&y, &Hyperparams::default()) - 6.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn empty_selection_predicts_intercept() {
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let hyper = Hyperparams::default();
        let test_raw = DMatrix::from_element(2, 2, 0.3);
        let pred = predict_with(&y, &hyper, &vec![vec![false, false]; 4], |_| unreachable!(), &test_raw).unwrap();
        let a0 = 7.0 / 4.0;
        assert!(pred.test.iter().chain(pred.fitted.iter()).all(|v| (*v - a0).abs() < 1e-15));
    }

    #[test]
    fn scalar_ridge_oracle() {
        // n = 3, one selected balance, no standardization
        let b = DMatrix::from_column_slice(3, 2, &[0.5, -1.0, 2.0, 9.0, 9.0, 9.0]);
        let y = DVector::from_vec(vec![1.0, -0.5, 2.5]);
        let hyper = Hyperparams { h_beta: 2.0, ..Hyperparams::default() };
        let btb = 0.25 + 1.0 + 4.0;
        let bty = 0.5 * 1.0 + 0.5 + 2.0 * 2.5;
        let beta = bty / (btb + 0.5);
        let a0 = 3.0 / 4.0;
        let test_raw = DMatrix::from_row_slice(1, 2, &[0.8, 1.0]);
        let pred = predict_with(&y, &hyper, &[vec![true, false]], |_| Ok((b.clone(), None)), &test_raw).unwrap();
        assert!((pred.test[0] - (a0 + 0.8 * beta)).abs() < 1e-12);
        assert!((pred.fitted[1] - (a0 - beta)).abs() < 1e-12);
        let r = ridge_coefficients(&b.columns(0, 1).into_owned(), &y, 2.0).unwrap();
        assert!((r[0] - beta).abs() < 1e-12);
    }

    #[test]
    fn test_balances_use_training_scaling() {
        let y = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let mut b = DMatrix::from_column_slice(3, 1, &[1.0, 3.0, 5.0]);
        let sc = standardize_columns(&mut b).unwrap();
        let test_raw = DMatrix::from_row_slice(1, 1, &[3.0]);
        let hyper = Hyperparams::default();
        let pred = predict_with(&y, &hyper, &[vec![true]], |_| Ok((b.clone(), Some(sc.clone()))), &test_raw).unwrap();
        // the test value sits at the training mean
        assert!(pred.test[0].abs() < 1e-15);
    }

    #[test]
    fn loglik_density_algebra() {
        let y = DVector::from_vec(vec![0.0]);
        assert!((crate::model::normal_logpdf(0.0, 1.0) + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!(
            (crate::model::normal_logpdf(0.0, 1.0) - crate::model::normal_logpdf(0.0, 2.0) - 0.5 * 2f64.ln()).abs() < 1e-15
        );
        let ll = pointwise_loglik_with(&y, &Hyperparams::default(), &[vec![false], vec![false]], |_| unreachable!()).unwrap();
        assert_eq!(ll.column(0), ll.column(1));
    }

    #[test]
    fn conditional_means_match_dense_posterior() {
        // block structure: with centered balances the intercept decouples
        let y = DVector::from_vec(vec![1.0, 2.0, 0.5, -1.0]);
        let mut b = DMatrix::from_column_slice(4, 1, &[0.2, 1.1, -0.4, 0.9]);
        standardize_columns(&mut b).unwrap();
        let hyper = Hyperparams::default();
        let (theta, sigma2) = conditional_means(&y, &b, &hyper).unwrap();
        let a0 = intercept_estimate(&y, &hyper);
        let beta = ridge_coefficients(&b, &y, hyper.h_beta).unwrap()[0];
        assert!((theta[0] - a0).abs() < 1e-12 && (theta[1] - beta).abs() < 1e-12);
        let quad = y.dot(&y) - a0 * a0 * (4.0 + 1.0) - beta * beta * (b.norm_squared() + 1.0);
        let oracle = (hyper.b0 + 0.5 * quad) / (hyper.a0 + 2.0 - 1.0);
        assert!((sigma2 - oracle).abs() < 1e-12);
    }

    fn random_psi(n: usize, j: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut psi = DMatrix::from_fn(n, j, |_, _| rng.random_range(0.05..1.0));
        for mut row in psi.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        psi
    }

    #[test]
    fn full_model_prediction_is_partition_invariant() {
        let (n, j) = (12, 5);
        let psi = random_psi(n, j, 4);
        let psi_test = random_psi(3, j, 5);
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let hyper = Hyperparams::default();
        let alt = PartitionSpec::new(
            j,
            vec![
                crate::model::Partition::new(vec![0, 1], vec![2, 3, 4]),
                crate::model::Partition::new(vec![0], vec![1]),
                crate::model::Partition::new(vec![2], vec![3, 4]),
                crate::model::Partition::new(vec![3], vec![4]),
            ],
        )
        .unwrap();
        let run = |spec: &PartitionSpec| {
            let train = raw_balances(&psi, spec, 1e-9).unwrap();
            let test = raw_balances(&psi_test, spec, 1e-9).unwrap();
            let xi = vec![vec![true; j - 1]];
            predict_with(&y, &hyper, &xi, |_| Ok((train.clone(), None)), &test).unwrap()
        };
        // ridge with isotropic penalty is invariant to orthogonal rotations
        let a = run(&sbp_pivot(j).unwrap());
        let b = run(&alt);
        assert!((a.test - b.test).abs().max() < 1e-6);
        assert!((a.fitted - b.fitted).abs().max() < 1e-6);
    }

    proptest! {
        #[test]
        fn psi_rows_on_simplex(
            lambda in proptest::collection::vec(1e-6f64..1e3, 12),
            z in proptest::collection::vec(0u32..5000, 12),
        ) {
            let l = DMatrix::from_row_slice(3, 4, &lambda);
            let zm = DMatrix::from_row_slice(3, 4, &z);
            let psi = estimate_psi_test(&l, &zm).unwrap();
            for row in psi.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|v| *v > 0.0));
            }
        }
    }
}
