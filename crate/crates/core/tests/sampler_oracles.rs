use microjoint::mcmc::{run_chain, run_chains_shared, ChainOutput, Mode, Sampler, SamplerConfig};
use microjoint::model::{sbp_pivot, standardize_columns, Dataset, Hyperparams};
use microjoint::simulation::{gen_dm_counts, SimConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

fn tiny_dataset() -> Dataset {
    let z = DMatrix::from_row_slice(1, 2, &[3, 1]);
    let x = DMatrix::from_row_slice(1, 1, &[0.7]);
    Dataset::new(DVector::from_element(1, 0.2), z, x).unwrap()
}

fn dm_config(seed: u64) -> SamplerConfig {
    SamplerConfig {
        iterations: 2_000,
        burn_in: 1_000,
        thin: 1,
        seed,
        mode: Mode::DmOnly,
        ..SamplerConfig::default()
    }
}

/// Counts from a Dirichlet-multinomial regression with the given effects.
fn dm_fixture(n: usize, phi: &DMatrix<f64>, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (j, p) = phi.shape();
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    standardize_columns(&mut x).unwrap();
    let cfg = SimConfig {
        n,
        p,
        j,
        d: 0.02,
        zdot_range: (500, 1500),
        ..SimConfig::default()
    };
    let alpha = DVector::from_fn(j, |t, _| 0.3 * t as f64);
    let (z, _) = gen_dm_counts(&x, &alpha, phi, &cfg, &mut rng).unwrap();
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Dataset::new(y, z, x).unwrap()
}

#[test]
fn alpha_ratio_matches_hand_computation() {
    let data = tiny_dataset();
    let spec = sbp_pivot(2).unwrap();
    let hyper = Hyperparams::default();
    let mut s = Sampler::new(&data, hyper, &spec, dm_config(1)).unwrap();
    s.set_alpha(0, 0.3).unwrap();
    s.set_alpha(1, -0.2).unwrap();
    let mut state = s.state().clone();
    state.c[(0, 0)] = 1.7;
    state.c[(0, 1)] = 0.4;
    s.set_state(state).unwrap();

    let (a, b) = (0.3f64, 0.8f64);
    let (g, g2) = (a.exp(), b.exp());
    let hand = (g2 - g) * 1.7f64.ln() - ln_gamma(g2) + ln_gamma(g) - b * b / 20.0 + a * a / 20.0;
    assert!((s.log_ratio_alpha(0, b) - hand).abs() < 1e-10);
    assert_eq!(s.log_ratio_alpha(1, -0.2), 0.0);
}

#[test]
fn metropolis_moves_are_reversible() {
    let data = dm_fixture(15, &DMatrix::zeros(4, 3), 3);
    let spec = sbp_pivot(4).unwrap();
    let mut s = Sampler::new(&data, Hyperparams::default(), &spec, SamplerConfig { mode: Mode::Joint, ..dm_config(2) }).unwrap();
    for _ in 0..5 {
        s.sweep().unwrap();
    }
    // intercept
    let old = s.state().alpha[2];
    let fwd = s.log_ratio_alpha(2, old + 0.4);
    s.set_alpha(2, old + 0.4).unwrap();
    let back = s.log_ratio_alpha(2, old);
    assert!((fwd + back).abs() < 1e-10);

    // add then delete
    let (j, p) = (0..4)
        .flat_map(|j| (0..3).map(move |p| (j, p)))
        .find(|&(j, p)| !s.state().zeta[(j, p)])
        .unwrap();
    let fwd = s.log_ratio_add(j, p, -0.6);
    s.set_effect(j, p, true, -0.6).unwrap();
    let back = s.log_ratio_delete(j, p);
    assert!((fwd + back).abs() < 1e-10);

    // within
    let fwd = s.log_ratio_within(j, p, 0.25);
    s.set_effect(j, p, true, 0.25).unwrap();
    let back = s.log_ratio_within(j, p, -0.6);
    assert!((fwd + back).abs() < 1e-10);

    // balance flip
    let fwd = s.log_ratio_xi(1).unwrap();
    let was = s.state().xi[1];
    s.set_xi(1, !was);
    let back = s.log_ratio_xi(1).unwrap();
    assert!((fwd + back).abs() < 1e-10);
}

#[test]
fn latent_c_gibbs_moments() {
    let data = tiny_dataset();
    let spec = sbp_pivot(2).unwrap();
    let mut s = Sampler::new(&data, Hyperparams::default(), &spec, dm_config(9)).unwrap();
    s.set_alpha(0, 1.5f64.ln()).unwrap();
    let mut state = s.state().clone();
    state.u[0] = 2.0;
    s.set_state(state).unwrap();
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            s.update_c().unwrap();
            s.state().c[(0, 0)]
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    assert!((mean - 1.5).abs() < 0.02, "{mean}");
    assert!((var - 0.5).abs() < 0.02, "{var}");
}

#[test]
fn latent_u_gibbs_moments() {
    let z = DMatrix::from_row_slice(2, 2, &[6, 4, 1, 0]);
    let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let data = Dataset::new(DVector::zeros(2), z, x).unwrap();
    let spec = sbp_pivot(2).unwrap();
    let mut s = Sampler::new(&data, Hyperparams::default(), &spec, dm_config(4)).unwrap();
    let mut state = s.state().clone();
    state.c = DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 0.6, 0.4]);
    s.set_state(state).unwrap();
    let draws = 100_000;
    let (mut sum, mut above) = (0.0, 0usize);
    for _ in 0..draws {
        s.update_u().unwrap();
        sum += s.state().u[0];
        above += usize::from(s.state().u[1] > 1.0);
    }
    assert!((sum / draws as f64 - 2.0).abs() < 0.03);
    assert!((above as f64 / draws as f64 - (-1.0f64).exp()).abs() < 0.01);
}

#[test]
fn strong_covariate_is_selected() {
    let mut phi = DMatrix::zeros(5, 3);
    phi[(1, 0)] = 5.0;
    let data = dm_fixture(200, &phi, 11);
    let spec = sbp_pivot(5).unwrap();
    let out = run_chain(&data, &Hyperparams::default(), &spec, &dm_config(5)).unwrap();
    assert!(out.mppi_zeta[(1, 0)] > 0.9, "{}", out.mppi_zeta);
}

#[test]
fn null_data_stays_sparse() {
    let data = dm_fixture(60, &DMatrix::zeros(8, 5), 12);
    let spec = sbp_pivot(8).unwrap();
    let hyper = Hyperparams::default();
    let out = run_chain(&data, &hyper, &spec, &dm_config(6)).unwrap();
    let mean = out.mppi_zeta.mean();
    assert!(mean < 2.0 * hyper.a / (hyper.a + hyper.b), "{mean}");
}

#[test]
fn selection_shrinks_as_prior_tightens() {
    let mut phi = DMatrix::zeros(6, 5);
    phi[(0, 1)] = 0.6;
    phi[(3, 2)] = -0.5;
    phi[(4, 4)] = 0.4;
    let data = dm_fixture(50, &phi, 13);
    let spec = sbp_pivot(6).unwrap();
    let config = SamplerConfig { iterations: 4_000, burn_in: 2_000, between_moves_per_iter: 10, ..dm_config(7) };
    let selected: Vec<f64> = [9.0, 99.0, 999.0]
        .iter()
        .map(|&b| {
            let hyper = Hyperparams { b, ..Hyperparams::default() };
            run_chain(&data, &hyper, &spec, &config).unwrap().mppi_zeta.sum()
        })
        .collect();
    assert!(selected[0] >= selected[1] && selected[1] >= selected[2], "{selected:?}");
}

#[test]
fn infinite_spike_prior_never_adds() {
    let mut phi = DMatrix::zeros(4, 2);
    phi[(0, 0)] = 2.0;
    let data = dm_fixture(30, &phi, 14);
    let spec = sbp_pivot(4).unwrap();
    let hyper = Hyperparams { b: f64::INFINITY, ..Hyperparams::default() };
    let config = SamplerConfig { init_zeta_frac: 0.0, ..dm_config(8) };
    let out = run_chain(&data, &hyper, &spec, &config).unwrap();
    assert!(out.acceptance.add.proposed > 0);
    assert_eq!(out.acceptance.add.accepted, 0);
    assert_eq!(out.mppi_zeta.sum(), 0.0);
}

#[test]
fn balance_flip_with_zero_response_is_a_determinant_ratio() {
    let y = DVector::zeros(2);
    let b = DMatrix::from_row_slice(2, 1, &[0.8, -0.3]);
    let hyper = Hyperparams { a_m: 2.0, b_m: 2.0, h_alpha0: 1.3, h_beta: 0.7, ..Hyperparams::default() };
    let config = SamplerConfig { init_xi_frac: 0.0, mode: Mode::LmOnly, ..dm_config(1) };
    let mut s = Sampler::with_fixed_balances(&y, b, hyper, config).unwrap();
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let (h, hb) = (hyper.h_alpha0, hyper.h_beta);
    let bv = [0.8, -0.3];
    let s0 = [[1.0 + h, h], [h, 1.0 + h]];
    let s1 = [
        [s0[0][0] + hb * bv[0] * bv[0], s0[0][1] + hb * bv[0] * bv[1]],
        [s0[1][0] + hb * bv[1] * bv[0], s0[1][1] + hb * bv[1] * bv[1]],
    ];
    // common scale b0/a0 cancels; equal prior weights contribute nothing
    let hand = -0.5 * (det(s1).ln() - det(s0).ln());
    assert!((s.log_ratio_xi(0).unwrap() - hand).abs() < 1e-12);

    let uneven = Hyperparams { a_m: 1.0, b_m: 4.0, ..hyper };
    let config = SamplerConfig { init_xi_frac: 0.0, mode: Mode::LmOnly, ..dm_config(1) };
    let mut s = Sampler::with_fixed_balances(&y, DMatrix::from_row_slice(2, 1, &bv), uneven, config).unwrap();
    assert!((s.log_ratio_xi(0).unwrap() - hand - 0.25f64.ln()).abs() < 1e-12);
}

fn same_output(a: &ChainOutput, b: &ChainOutput) {
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.effects, b.effects);
    assert_eq!(a.u, b.u);
    assert_eq!(a.xi, b.xi);
    assert_eq!(a.psi, b.psi);
    assert_eq!(a.log_posterior, b.log_posterior);
    assert_eq!(a.mppi_zeta, b.mppi_zeta);
    assert_eq!(a.mppi_xi, b.mppi_xi);
}

#[test]
fn chains_are_reproducible() {
    let mut phi = DMatrix::zeros(5, 3);
    phi[(0, 0)] = 1.0;
    let data = dm_fixture(20, &phi, 15);
    let spec = sbp_pivot(5).unwrap();
    let config = SamplerConfig { iterations: 300, burn_in: 100, thin: 5, mode: Mode::Joint, ..dm_config(21) };
    let hyper = Hyperparams::default();
    let a = run_chain(&data, &hyper, &spec, &config).unwrap();
    let b = run_chain(&data, &hyper, &spec, &config).unwrap();
    same_output(&a, &b);
    assert_eq!(a.n_samples(), 40);
    assert_eq!(a.log_posterior.len(), 300);

    let pool = |k| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let one = pool(1).install(|| run_chain(&data, &hyper, &spec, &config)).unwrap();
    let four = pool(4).install(|| run_chain(&data, &hyper, &spec, &config)).unwrap();
    same_output(&a, &one);
    same_output(&one, &four);

    let single = SamplerConfig { iterations: 107, burn_in: 100, thin: 7, ..config };
    assert_eq!(run_chain(&data, &hyper, &spec, &single).unwrap().n_samples(), 1);
}

#[test]
fn covariate_chain_ignores_the_response_block() {
    let mut phi = DMatrix::zeros(5, 4);
    phi[(0, 0)] = 1.2;
    phi[(2, 3)] = -1.0;
    let data = dm_fixture(40, &phi, 16);
    let spec = sbp_pivot(5).unwrap();
    let hyper = Hyperparams::default();
    let config = SamplerConfig { iterations: 600, burn_in: 200, between_moves_per_iter: 5, ..dm_config(3) };
    let dm = run_chain(&data, &hyper, &spec, &config).unwrap();
    let joint = run_chain(&data, &hyper, &spec, &SamplerConfig { mode: Mode::Joint, ..config.clone() }).unwrap();
    assert_eq!(dm.effects, joint.effects);
    assert_eq!(dm.psi, joint.psi);
    assert_eq!(dm.mppi_zeta, joint.mppi_zeta);
}

#[test]
fn shared_chains_match_separate_runs() {
    let mut phi = DMatrix::zeros(6, 3);
    phi[(1, 2)] = 1.0;
    let data = dm_fixture(30, &phi, 18);
    let spec = sbp_pivot(6).unwrap();
    let config = SamplerConfig { iterations: 400, burn_in: 100, thin: 3, mode: Mode::Joint, ..dm_config(5) };
    let hypers: Vec<Hyperparams> = [1.0, 2.0, 8.0]
        .iter()
        .map(|&b0| Hyperparams { b0, a_m: 2.0, ..Hyperparams::default() })
        .collect();
    let shared = run_chains_shared(&data, &hypers, &spec, &config).unwrap();
    for (h, out) in hypers.iter().zip(&shared) {
        let alone = run_chain(&data, h, &spec, &config).unwrap();
        same_output(out, &alone);
        assert_eq!(out.acceptance, alone.acceptance);
        assert_eq!(out.hyper, *h);
    }
    let clash = [Hyperparams::default(), Hyperparams { b: 99.0, ..Hyperparams::default() }];
    assert!(run_chains_shared(&data, &clash, &spec, &config).is_err());
}

#[test]
fn log_posterior_trace_is_finite() {
    let mut phi = DMatrix::zeros(6, 3);
    phi[(1, 1)] = 1.0;
    let data = dm_fixture(25, &phi, 17);
    let spec = sbp_pivot(6).unwrap();
    let config = SamplerConfig { mode: Mode::Joint, ..dm_config(4) };
    let out = run_chain(&data, &Hyperparams::default(), &spec, &config).unwrap();
    assert!(out.log_posterior.iter().all(|v| v.is_finite()));
    assert!(out.mppi_zeta.iter().chain(&out.mppi_xi).all(|v| (0.0..=1.0).contains(v)));
}
