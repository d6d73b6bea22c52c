//! Chain sampler against the dense Gaussian-process law.

use nalgebra::{DMatrix, DVector};
use ppcpt_core::privacy::{conditional_coefficients, tail_exceedance_rate, tail_threshold};
use ppcpt_core::{ChainResolution, NoiseChain, PrivacyConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernel(points: &[f64], beta: f64, sigma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), points.len(), |i, j| sigma * (-beta * (points[i] - points[j]).abs()).exp())
}

fn unclipped(sigma: f64, beta: f64) -> PrivacyConfig {
    PrivacyConfig {
        sigma,
        beta,
        k: 1e12,
        c_max: 1e12,
        enabled: true,
        ..PrivacyConfig::disabled()
    }
}

#[test]
fn midpoint_coefficients_match_dense_conditional() {
    for &(beta, n) in &[(0.3, 1usize), (2.0, 3), (10.0, 5), (40.0, 2)] {
        let h = 1.0 / (2.0 * n as f64);
        let k = kernel(&[0.0, h, 2.0 * h], beta, 1.0);
        let ends = DMatrix::from_row_slice(2, 2, &[k[(0, 0)], k[(0, 2)], k[(2, 0)], k[(2, 2)]]);
        let cross = DVector::from_vec(vec![k[(1, 0)], k[(1, 2)]]);
        let chol = ends.cholesky().unwrap();
        let weights = chol.solve(&cross);
        let var = k[(1, 1)] - cross.dot(&weights);
        let (m, v) = conditional_coefficients(beta * h).unwrap();
        assert!((weights[0] - m).abs() < 1e-12 && (weights[1] - m).abs() < 1e-12, "{weights} vs {m}");
        assert!((var - v).abs() < 1e-12, "{var} vs {v}");
    }
}

/// Empirical mean and covariance of chain draws at fixed resolution `n`
/// must match `sigma exp(-beta |x_i - x_j|)` on the odd grid points within
/// three standard errors.
fn check_chain_moments(n: usize, beta: f64, sigma: f64, draws: usize, seed: u64) {
    let points: Vec<f64> = (0..n).map(|i| (2 * i + 1) as f64 / (2.0 * n as f64)).collect();
    let cov = kernel(&points, beta, sigma);
    // The dense oracle must itself be a valid covariance.
    assert!(cov.clone().cholesky().is_some());

    let cfg = unclipped(sigma, beta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; n];
    let mut prod = vec![vec![0.0; n]; n];
    for _ in 0..draws {
        let mut chain = NoiseChain::new(1, beta, ChainResolution::Fixed(n)).unwrap();
        for _ in 0..n {
            chain.sample(&cfg, &mut rng).unwrap();
        }
        let v = chain.values(0);
        for i in 0..n {
            sum[i] += v[i];
            for j in 0..=i {
                prod[i][j] += v[i] * v[j];
            }
        }
    }
    let m = draws as f64;
    for i in 0..n {
        let mean = sum[i] / m;
        let se = (cov[(i, i)] / m).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean[{i}] = {mean}, se {se}");
        for j in 0..=i {
            let emp = prod[i][j] / m - (sum[i] / m) * (sum[j] / m);
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / m).sqrt();
            assert!((emp - cov[(i, j)]).abs() <= 3.0 * se, "cov[{i}][{j}] = {emp}, oracle {}, se {se}", cov[(i, j)]);
        }
    }
}

#[test]
fn chain_matches_dense_oracle_length_six() {
    check_chain_moments(6, 3.0, 2.0, 100_000, 101);
}

#[test]
fn chain_matches_dense_oracle_length_three() {
    check_chain_moments(3, 0.5, 0.7, 100_000, 202);
}

#[test]
fn actions_are_independent() {
    let cfg = unclipped(1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 50_000;
    let mut cross = 0.0;
    for _ in 0..draws {
        let mut chain = NoiseChain::new(2, 1.0, ChainResolution::Fixed(2)).unwrap();
        chain.sample(&cfg, &mut rng).unwrap();
        chain.sample(&cfg, &mut rng).unwrap();
        cross += chain.values(0)[1] * chain.values(1)[1];
    }
    let se = (1.0 / draws as f64).sqrt();
    assert!((cross / draws as f64).abs() <= 3.0 * se);
}

#[test]
fn single_point_tail_matches_normal_tail() {
    // A one-point chain is N(0, sigma); its tail beyond the threshold is
    // the complementary normal CDF.
    let (beta, sigma, u): (f64, f64, f64) = (0.01, 1.0, 0.5);
    let trials = 10_000;
    let rate = tail_exceedance_rate(beta, sigma, u, 1, trials, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let z = tail_threshold(beta, sigma, u) / sigma.sqrt();
    let expected = 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    let se = (expected * (1.0 - expected) / trials as f64).sqrt();
    assert!((rate - expected).abs() <= 3.0 * se, "{rate} vs {expected}");
}

#[test]
fn tail_rate_shrinks_with_u() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r1 = tail_exceedance_rate(0.01, 1.0, 0.2, 8, 20_000, &mut rng).unwrap();
    let r3 = tail_exceedance_rate(0.01, 1.0, 2.0, 8, 20_000, &mut rng).unwrap();
    assert!(r3 < r1);
}
