//! Synthetic replicates: AR(1)-correlated covariates, overdispersed
//! Dirichlet-multinomial counts driven by a sparse log-linear truth, and a
//! response built from a sparse set of pivot balances.
//!
//! Replicate `r` of a run seeded with `seed` uses a ChaCha8 generator seeded
//! with `seed` on stream `r`, so replicates are independent of each other and
//! of the order in which they are produced.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{balance_matrix, sbp_pivot, zero_replace, Dataset};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub j: usize,
    /// AR(1) correlation between adjacent covariates.
    pub omega: f64,
    pub n_true_cov: usize,
    /// Magnitude range of true effects; signs are random.
    pub phi_range: (f64, f64),
    pub alpha_range: (f64, f64),
    /// Overdispersion `d`; total Dirichlet concentration is `(1 - d) / d`.
    pub d: f64,
    pub zdot_range: (u32, u32),
    pub n_true_bal: usize,
    pub beta_range: (f64, f64),
    pub sigma_eps: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 50,
            p: 50,
            j: 150,
            omega: 0.4,
            n_true_cov: 10,
            phi_range: (0.75, 1.25),
            alpha_range: (-2.3, 2.3),
            d: 0.01,
            zdot_range: (2500, 7500),
            n_true_bal: 5,
            beta_range: (1.25, 1.75),
            sigma_eps: 1.0,
            delta: 6.67e-5,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 || self.p == 0 || self.j < 2 {
            return bad(format!("need N >= 1, P >= 1, J >= 2 (got {}, {}, {})", self.n, self.p, self.j));
        }
        if !(self.d > 0.0 && self.d < 1.0) {
            return bad(format!("overdispersion d must lie in (0, 1), got {}", self.d));
        }
        if !(-1.0 < self.omega && self.omega < 1.0) {
            return bad(format!("omega must lie in (-1, 1), got {}", self.omega));
        }
        for (name, (lo, hi)) in [
            ("phi_range", self.phi_range),
            ("alpha_range", self.alpha_range),
            ("beta_range", self.beta_range),
        ] {
            if !(lo <= hi) {
                return bad(format!("{name} is not ordered: ({lo}, {hi})"));
            }
        }
        if self.zdot_range.0 == 0 || self.zdot_range.0 > self.zdot_range.1 {
            return bad(format!("zdot_range must be ordered and positive: {:?}", self.zdot_range));
        }
        if self.n_true_cov > self.j * self.p {
            return bad(format!("n_true_cov {} exceeds J*P", self.n_true_cov));
        }
        if self.n_true_bal > self.j - 1 {
            return bad(format!("n_true_bal {} exceeds J-1", self.n_true_bal));
        }
        if !(self.sigma_eps >= 0.0) || !(self.delta > 0.0) {
            return bad("sigma_eps must be >= 0 and delta > 0".into());
        }
        Ok(())
    }
}

/// Generating parameters of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub zeta_true: DMatrix<bool>,
    pub phi_true: DMatrix<f64>,
    pub alpha_true: DVector<f64>,
    pub xi_true: Vec<bool>,
    pub beta_true: DVector<f64>,
    /// Compositions of the training subjects (before zero replacement).
    pub psi_star: DMatrix<f64>,
}

/// Test subjects; the response is optional for real prediction tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub z: DMatrix<u32>,
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
}

impl TestSet {
    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn check_dims(&self, j: usize, p: usize) -> Result<()> {
        if self.z.ncols() != j {
            return Err(Error::Dimension {
                what: "test taxa (J)",
                expected: j,
                actual: self.z.ncols(),
            });
        }
        if self.x.ncols() != p {
            return Err(Error::Dimension {
                what: "test covariates (P)",
                expected: p,
                actual: self.x.ncols(),
            });
        }
        if self.x.nrows() != self.z.nrows() {
            return Err(Error::Dimension {
                what: "test covariate rows",
                expected: self.z.nrows(),
                actual: self.x.nrows(),
            });
        }
        if let Some(y) = &self.y {
            if y.len() != self.z.nrows() {
                return Err(Error::Dimension {
                    what: "test response length",
                    expected: self.z.nrows(),
                    actual: y.len(),
                });
            }
        }
        Ok(())
    }
}

impl From<&Dataset> for TestSet {
    fn from(d: &Dataset) -> Self {
        TestSet {
            z: d.z().clone(),
            x: d.x().clone(),
            y: Some(d.y().clone()),
        }
    }
}

/// One simulated replicate: training data, test data and the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub train: Dataset,
    pub test: TestSet,
    pub truth: GroundTruth,
}

/// Generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn signed(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    let v = uniform(rng, range);
    if rng.random::<bool>() {
        v
    } else {
        -v
    }
}

/// `N x P` covariates with `corr(x_p, x_q) = omega^|p - q|`, via the AR(1) recursion.
pub fn gen_covariates(cfg: &SimConfig, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(cfg.n, cfg.p);
    let innov = (1.0 - cfg.omega * cfg.omega).sqrt();
    for i in 0..cfg.n {
        let mut prev: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = prev;
        for q in 1..cfg.p {
            let e: f64 = rng.sample(StandardNormal);
            prev = cfg.omega * prev + innov * e;
            x[(i, q)] = prev;
        }
    }
    x
}

/// Draws the sparse effects, intercepts and balance coefficients.
pub fn gen_truth(cfg: &SimConfig, rng: &mut impl Rng) -> (DMatrix<bool>, DMatrix<f64>, DVector<f64>, Vec<bool>, DVector<f64>) {
    let (j, p, m) = (cfg.j, cfg.p, cfg.j - 1);
    let mut zeta = DMatrix::from_element(j, p, false);
    let mut phi = DMatrix::zeros(j, p);
    for idx in rand::seq::index::sample(rng, j * p, cfg.n_true_cov) {
        let (t, q) = (idx / p, idx % p);
        zeta[(t, q)] = true;
        phi[(t, q)] = signed(rng, cfg.phi_range);
    }
    let alpha = DVector::from_iterator(j, (0..j).map(|_| uniform(rng, cfg.alpha_range)));
    let mut xi = vec![false; m];
    let mut beta = DVector::zeros(m);
    for k in rand::seq::index::sample(rng, m, cfg.n_true_bal) {
        xi[k] = true;
        beta[k] = signed(rng, cfg.beta_range);
    }
    (zeta, phi, alpha, xi, beta)
}

/// Counts and compositions: `gamma* = gamma / sum(gamma) * (1 - d) / d`,
/// `psi* ~ Dirichlet(gamma*)`, `zdot ~ U{lo..=hi}`, `z ~ Multinomial(zdot, psi*)`.
pub fn gen_dm_counts(
    x: &DMatrix<f64>,
    alpha: &DVector<f64>,
    phi: &DMatrix<f64>,
    cfg: &SimConfig,
    rng: &mut impl Rng,
) -> Result<(DMatrix<u32>, DMatrix<f64>)> {
    let (n, j) = (x.nrows(), alpha.len());
    let total_conc = (1.0 - cfg.d) / cfg.d;
    let mut z = DMatrix::zeros(n, j);
    let mut psi = DMatrix::zeros(n, j);
    for i in 0..n {
        let lambda: Vec<f64> = (0..j)
            .map(|t| alpha[t] + (0..x.ncols()).map(|q| phi[(t, q)] * x[(i, q)]).sum::<f64>())
            .collect();
        // normalize in log space to avoid overflow
        let lmax = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lambda.iter().map(|l| (l - lmax).exp()).collect();
        let wsum: f64 = w.iter().sum();
        let mut draws = Vec::with_capacity(j);
        for &wt in &w {
            let shape = wt / wsum * total_conc;
            let g = Gamma::new(shape, 1.0).map_err(|e| Error::Domain(format!("Dirichlet shape {shape}: {e}")))?;
            draws.push(g.sample(rng));
        }
        let total: f64 = draws.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain(format!("Dirichlet draw for subject {i} underflowed")));
        }
        for t in 0..j {
            psi[(i, t)] = draws[t] / total;
        }
        let zdot = rng.random_range(cfg.zdot_range.0..=cfg.zdot_range.1);
        // sequential conditional binomials
        let mut remaining = u64::from(zdot);
        let mut mass_left = 1.0;
        for t in 0..j {
            if remaining == 0 {
                break;
            }
            let pt = psi[(i, t)];
            let k = if t == j - 1 || mass_left <= 0.0 {
                remaining
            } else {
                let prob = (pt / mass_left).clamp(0.0, 1.0);
                Binomial::new(remaining, prob)
                    .map_err(|e| Error::Domain(format!("binomial: {e}")))?
                    .sample(rng)
            };
            z[(i, t)] = k as u32;
            remaining -= k;
            mass_left -= pt;
        }
    }
    Ok((z, psi))
}

/// `y = B*(psi*) beta + eps` with unstandardized pivot balances of the
/// zero-replaced compositions and no intercept.
pub fn gen_response(psi_star: &DMatrix<f64>, beta: &DVector<f64>, cfg: &SimConfig, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let (n, j) = psi_star.shape();
    let mut rep = DMatrix::zeros(n, j);
    for i in 0..n {
        let row: Vec<f64> = psi_star.row(i).iter().copied().collect();
        let r = zero_replace(&row, cfg.delta)?;
        for t in 0..j {
            rep[(i, t)] = r[t];
        }
    }
    let b = balance_matrix(&rep, &sbp_pivot(j)?, false)?;
    let mut y = &b * beta;
    for v in y.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += cfg.sigma_eps * e;
    }
    Ok(y)
}

fn gen_subjects(
    cfg: &SimConfig,
    truth: &(DMatrix<bool>, DMatrix<f64>, DVector<f64>, Vec<bool>, DVector<f64>),
    rng: &mut impl Rng,
) -> Result<(Dataset, DMatrix<f64>)> {
    let x = gen_covariates(cfg, rng);
    let (z, psi) = gen_dm_counts(&x, &truth.2, &truth.1, cfg, rng)?;
    let y = gen_response(&psi, &truth.4, cfg, rng)?;
    Ok((Dataset::new(y, z, x)?, psi))
}

/// One truth, then independent training and test sets of `N` subjects each.
pub fn gen_replicate(cfg: &SimConfig, rng: &mut impl Rng) -> Result<Replicate> {
    cfg.validate()?;
    let truth = gen_truth(cfg, rng);
    let (train, psi_star) = gen_subjects(cfg, &truth, rng)?;
    let (test, _) = gen_subjects(cfg, &truth, rng)?;
    let (zeta_true, phi_true, alpha_true, xi_true, beta_true) = truth;
    Ok(Replicate {
        train,
        test: TestSet::from(&test),
        truth: GroundTruth {
            zeta_true,
            phi_true,
            alpha_true,
            xi_true,
            beta_true,
            psi_star,
        },
    })
}

/// Replicates `0..count` of `cfg`, generated in parallel.
pub fn gen_replicates(cfg: &SimConfig, count: usize) -> Result<Vec<Replicate>> {
    par::map_range(count, |r| gen_replicate(cfg, &mut replicate_rng(cfg.seed, r as u64)))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn covariate_correlation_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SimConfig { n: 2000, p: 3, ..SimConfig::default() };
        let x = gen_covariates(&cfg, &mut rng);
        let c: Vec<Vec<f64>> = (0..3).map(|q| x.column(q).iter().copied().collect()).collect();
        assert!((corr(&c[0], &c[1]) - 0.4).abs() < 0.05);
        assert!((corr(&c[0], &c[2]) - 0.16).abs() < 0.05);
        let cfg0 = SimConfig { omega: 0.0, ..cfg };
        let x = gen_covariates(&cfg0, &mut rng);
        let a: Vec<f64> = x.column(0).iter().copied().collect();
        let b: Vec<f64> = x.column(1).iter().copied().collect();
        assert!(corr(&a, &b).abs() < 0.1);
    }

    #[test]
    fn dirichlet_moments_match() {
        // uniform truth: gamma* = (1-d)/d / J per taxon
        let cfg = SimConfig { n: 10_000, p: 1, j: 5, d: 0.1, ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::zeros(cfg.n, 1);
        let (z, psi) = gen_dm_counts(&x, &DVector::zeros(5), &DMatrix::zeros(5, 1), &cfg, &mut rng).unwrap();
        let a0 = (1.0 - cfg.d) / cfg.d;
        let mean = 0.2;
        let var_oracle = mean * (1.0 - mean) / (a0 + 1.0);
        for t in 0..5 {
            let col = psi.column(t);
            let m = col.mean();
            let v = col.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (cfg.n as f64 - 1.0);
            assert!((m - mean).abs() < 0.01);
            assert!(((v - var_oracle) / var_oracle).abs() < 0.1, "{v} vs {var_oracle}");
        }
        for i in 0..cfg.n {
            let tot: u32 = z.row(i).iter().sum();
            assert!((2500..=7500).contains(&tot));
            assert!((psi.row(i).sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn null_response_is_zero() {
        let cfg = SimConfig { sigma_eps: 0.0, j: 6, ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = DMatrix::from_element(4, 6, 1.0 / 6.0);
        let y = gen_response(&psi, &DVector::zeros(5), &cfg, &mut rng).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn response_variance_decomposition() {
        let cfg = SimConfig { n: 10_000, p: 2, j: 4, d: 0.05, n_true_cov: 0, ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gen_covariates(&cfg, &mut rng);
        let alpha = DVector::from_vec(vec![0.5, -0.3, 0.1, 0.0]);
        let (_, psi) = gen_dm_counts(&x, &alpha, &DMatrix::zeros(4, 2), &cfg, &mut rng).unwrap();
        let beta = DVector::from_vec(vec![1.5, 0.0, -1.3]);
        let y = gen_response(&psi, &beta, &cfg, &mut rng).unwrap();
        // oracle: beta' Cov(B) beta + sigma^2 from the balances directly
        let mut rep = psi.clone();
        for i in 0..cfg.n {
            let r = zero_replace(&psi.row(i).iter().copied().collect::<Vec<_>>(), cfg.delta).unwrap();
            for t in 0..4 {
                rep[(i, t)] = r[t];
            }
        }
        let b = balance_matrix(&rep, &sbp_pivot(4).unwrap(), false).unwrap();
        let lin = &b * &beta;
        let m = lin.mean();
        let var_lin = lin.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (cfg.n as f64 - 1.0);
        let my = y.mean();
        let var_y = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (cfg.n as f64 - 1.0);
        let oracle = var_lin + 1.0;
        assert!(((var_y - oracle) / oracle).abs() < 0.1, "{var_y} vs {oracle}");
    }

    #[test]
    fn replicate_is_reproducible_and_consistent() {
        let cfg = SimConfig { n: 8, p: 4, j: 6, n_true_cov: 3, n_true_bal: 2, ..SimConfig::default() };
        let a = gen_replicate(&cfg, &mut replicate_rng(9, 0)).unwrap();
        let b = gen_replicate(&cfg, &mut replicate_rng(9, 0)).unwrap();
        assert_eq!(a, b);
        let c = gen_replicate(&cfg, &mut replicate_rng(9, 1)).unwrap();
        assert_ne!(a.train, c.train);
        assert_eq!(a.truth.zeta_true.iter().filter(|v| **v).count(), 3);
        assert_eq!(a.truth.beta_true.iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(a.truth.xi_true.iter().filter(|v| **v).count(), 2);
        for v in a.truth.phi_true.iter().filter(|v| **v != 0.0) {
            assert!((0.75..=1.25).contains(&v.abs()));
        }
        assert_ne!(a.train.x(), &a.test.x);
        assert_ne!(a.train.z(), &a.test.z);
        let s = a.truth.psi_star.row(0).sum();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(SimConfig { d: 1.0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { n_true_bal: 150, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { zdot_range: (10, 5), ..SimConfig::default() }.validate().is_err());
        SimConfig::default().validate().unwrap();
    }
}
