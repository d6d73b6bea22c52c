//! Gaussian-process privacy noise and its calibration.
//!
//! Each batch of value-function updates is made `(epsilon, delta')`
//! differentially private with respect to rewards that differ by at most one
//! in sup norm, by adding GP noise with kernel `exp(-beta |x - y|)` to the
//! value function. The calibration couples four quantities:
//!
//! ```text
//! beta  = B / (alpha (4k + 2 c_max + 1))
//! sigma >= sqrt(2 ln(1.25 / delta)) L^2 (1/beta^2 + 1/beta) / epsilon
//! 2k    >  8.68 sqrt(beta) sigma
//! delta' = delta + exp(-(2k - 8.68 sqrt(beta) sigma)^2 / 2)
//! ```

mod chain;

pub use chain::{
    conditional_coefficients, tail_exceedance_rate, tail_threshold, ChainResolution, NoiseChain,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant of the sup-norm tail bound for the exponential-kernel GP.
pub const TAIL_CONSTANT: f64 = 8.68;

/// Upper limit on fixed-point iterations in [`calibrate`].
pub const MAX_CALIBRATION_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Variance scale of the GP noise.
    pub sigma: f64,
    /// Kernel bandwidth.
    pub beta: f64,
    /// Noise draws are clipped to `[-2k, 2k]`.
    pub k: f64,
    /// Assumed bound on the temporal-difference error.
    pub c_max: f64,
    /// Lipschitz constant of the value-function approximator.
    #[serde(rename = "L")]
    pub lipschitz_l: f64,
    pub enabled: bool,
}

impl PrivacyConfig {
    /// The no-noise baseline. Numeric fields are placeholders.
    pub fn disabled() -> Self {
        Self {
            epsilon: 0.5,
            delta: 0.01,
            sigma: 1.0,
            beta: 1.0,
            k: f64::MAX,
            c_max: f64::MAX,
            lipschitz_l: 1.0,
            enabled: false,
        }
    }

    /// Checks the two calibration invariants. Always passes when disabled.
    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("beta", self.beta),
            ("k", self.k),
            ("c_max", self.c_max),
            ("L", self.lipschitz_l),
        ] {
            if !(v > 0.0) {
                return Err(Error::domain(alloc::format!("{name} must be positive, got {v}")));
            }
        }
        check_unit_interval("epsilon", self.epsilon)?;
        check_unit_interval("delta", self.delta)?;
        if !self.satisfies_tail_constraint() {
            return Err(Error::Infeasible(alloc::format!(
                "2k > 8.68 sqrt(beta) sigma violated: 2k = {}, 8.68 sqrt(beta) sigma = {}",
                2.0 * self.k,
                TAIL_CONSTANT * libm::sqrt(self.beta) * self.sigma
            )));
        }
        if !self.satisfies_sigma_bound() {
            return Err(Error::Infeasible(alloc::format!(
                "sigma = {} below the required {}",
                self.sigma,
                sigma_lower_bound(self.epsilon, self.delta, self.lipschitz_l, self.beta)
            )));
        }
        Ok(())
    }

    pub fn satisfies_tail_constraint(&self) -> bool {
        2.0 * self.k > TAIL_CONSTANT * libm::sqrt(self.beta) * self.sigma
    }

    pub fn satisfies_sigma_bound(&self) -> bool {
        self.sigma >= sigma_lower_bound(self.epsilon, self.delta, self.lipschitz_l, self.beta)
    }

    /// Probability that the clipping radius is exceeded by a sample path,
    /// `exp(-(2k - 8.68 sqrt(beta) sigma)^2 / 2)`.
    pub fn clipping_failure_probability(&self) -> f64 {
        let gap = 2.0 * self.k - TAIL_CONSTANT * libm::sqrt(self.beta) * self.sigma;
        if gap <= 0.0 {
            return 1.0;
        }
        libm::exp(-gap * gap / 2.0)
    }
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(alloc::format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Result of [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: PrivacyConfig,
    /// `exp(-(2k - 8.68 sqrt(beta) sigma)^2 / 2)`, added to `delta` in the
    /// per-iteration guarantee.
    pub delta_prime: f64,
    /// Smallest sigma if the sensitivity bound were taken as the RKHS norm
    /// `L sqrt(1/beta^2 + 1/beta)` instead of its square.
    pub sigma_unsquared_norm: f64,
    pub iterations: usize,
}

/// Minimal sigma of the Gaussian mechanism for a given L2 sensitivity.
pub fn gaussian_mechanism_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> f64 {
    libm::sqrt(2.0 * libm::log(1.25 / delta)) * sensitivity / epsilon
}

/// `sqrt(2 ln(1.25/delta)) L^2 (1/beta^2 + 1/beta) / epsilon`.
pub fn sigma_lower_bound(epsilon: f64, delta: f64, lipschitz_l: f64, beta: f64) -> f64 {
    gaussian_mechanism_sigma(epsilon, delta, rkhs_sensitivity_sq(lipschitz_l, beta))
}

/// `L^2 (1/beta^2 + 1/beta)`, the bound on the squared RKHS norm of the
/// change in value function between neighbouring reward functions.
pub fn rkhs_sensitivity_sq(lipschitz_l: f64, beta: f64) -> f64 {
    lipschitz_l * lipschitz_l * (1.0 / (beta * beta) + 1.0 / beta)
}

/// The epsilon implied by a given sigma when the remaining parameters are
/// held fixed; the inverse of [`sigma_lower_bound`] in its first argument.
pub fn implied_epsilon(sigma: f64, delta: f64, lipschitz_l: f64, beta: f64) -> f64 {
    libm::sqrt(2.0 * libm::log(1.25 / delta)) * rkhs_sensitivity_sq(lipschitz_l, beta) / sigma
}

/// `beta = B / (alpha (4k + 2 c_max + 1))`.
pub fn bandwidth_for(k: f64, c_max: f64, alpha: f64, batch: usize) -> f64 {
    batch as f64 / (alpha * (4.0 * k + 2.0 * c_max + 1.0))
}

/// Upper bound on the squared RKHS norm of a function on `[0, 1]` with
/// sup-norm `max_abs` and Lipschitz constant `lipschitz_l` under the kernel
/// `exp(-beta |x - y|)`: `(1 + beta/2) max_abs^2 + L^2 / (2 beta)`.
pub fn rkhs_norm_sq_bound(max_abs: f64, lipschitz_l: f64, beta: f64) -> f64 {
    (1.0 + beta / 2.0) * max_abs * max_abs + lipschitz_l * lipschitz_l / (2.0 * beta)
}

/// Solves the coupled constraints for `(beta, sigma, k)`.
///
/// Starting from `k = 8.68 sqrt(beta_1) sigma(beta_1)` with `beta_1` the
/// bandwidth at `k = 1`, alternates `beta <- beta(k)`, `sigma <- sigma(beta)`
/// and, while `2k > 8.68 sqrt(beta) sigma` fails, `k <- 4.34 sqrt(beta)
/// sigma + 1`.
pub fn calibrate(
    epsilon: f64,
    delta: f64,
    lipschitz_l: f64,
    c_max: f64,
    alpha: f64,
    batch: usize,
) -> Result<CalibrationReport> {
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    for (name, v) in [("L", lipschitz_l), ("c_max", c_max), ("alpha", alpha)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(alloc::format!("{name} must be positive, got {v}")));
        }
    }
    if batch == 0 {
        return Err(Error::domain("batch size must be positive"));
    }

    let sigma_for = |beta: f64| sigma_lower_bound(epsilon, delta, lipschitz_l, beta);
    let beta_1 = bandwidth_for(1.0, c_max, alpha, batch);
    let mut k = TAIL_CONSTANT * libm::sqrt(beta_1) * sigma_for(beta_1);

    for iteration in 1..=MAX_CALIBRATION_ITERATIONS {
        let beta = bandwidth_for(k, c_max, alpha, batch);
        let sigma = sigma_for(beta);
        if !(k.is_finite() && sigma.is_finite() && beta > 0.0) {
            break;
        }
        let config = PrivacyConfig {
            epsilon,
            delta,
            sigma,
            beta,
            k,
            c_max,
            lipschitz_l,
            enabled: true,
        };
        if config.satisfies_tail_constraint() {
            let unsquared = gaussian_mechanism_sigma(
                epsilon,
                delta,
                libm::sqrt(rkhs_sensitivity_sq(lipschitz_l, beta)),
            );
            return Ok(CalibrationReport {
                config,
                delta_prime: config.clipping_failure_probability(),
                sigma_unsquared_norm: unsquared,
                iterations: iteration,
            });
        }
        k = TAIL_CONSTANT / 2.0 * libm::sqrt(beta) * sigma + 1.0;
    }

    Err(Error::Infeasible(alloc::format!(
        "2k > 8.68 sqrt(beta) sigma not satisfied within {MAX_CALIBRATION_ITERATIONS} iterations \
         (epsilon={epsilon}, delta={delta}, L={lipschitz_l}, c_max={c_max}, alpha={alpha}, B={batch})"
    )))
}

/// Configuration for a prescribed noise scale `sigma`.
///
/// Solves `beta = B / (alpha (4k + 2 c_max + 1))` jointly with
/// `k = 4.34 sqrt(beta) sigma + 1`, then reports the smallest epsilon for
/// which `sigma` meets the noise bound at the given `delta`. Fails if that
/// epsilon is not below 1.
pub fn fixed_sigma(
    sigma: f64,
    delta: f64,
    lipschitz_l: f64,
    c_max: f64,
    alpha: f64,
    batch: usize,
) -> Result<PrivacyConfig> {
    check_unit_interval("delta", delta)?;
    for (name, v) in [("sigma", sigma), ("L", lipschitz_l), ("c_max", c_max), ("alpha", alpha)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(alloc::format!("{name} must be positive, got {v}")));
        }
    }
    if batch == 0 {
        return Err(Error::domain("batch size must be positive"));
    }
    // k(beta) is increasing and beta(k) decreasing, so the iteration
    // alternates around the unique fixed point and contracts.
    let k_for = |beta: f64| TAIL_CONSTANT / 2.0 * libm::sqrt(beta) * sigma + 1.0;
    let mut k = 1.0;
    for _ in 0..10_000 {
        let next = k_for(bandwidth_for(k, c_max, alpha, batch));
        let done = (next - k).abs() <= 1e-12 * next;
        k = 0.5 * (k + next);
        if done {
            break;
        }
    }
    let beta = bandwidth_for(k, c_max, alpha, batch);
    let k = k_for(beta);
    let mut epsilon = implied_epsilon(sigma, delta, lipschitz_l, beta);
    while sigma < sigma_lower_bound(epsilon, delta, lipschitz_l, beta) {
        epsilon = epsilon.next_up();
    }
    if !(epsilon < 1.0) {
        return Err(Error::Infeasible(alloc::format!(
            "sigma = {sigma} implies epsilon = {epsilon}, outside (0, 1)"
        )));
    }
    let config = PrivacyConfig {
        epsilon,
        delta,
        sigma,
        beta,
        k,
        c_max,
        lipschitz_l,
        enabled: true,
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_mechanism_reference() {
        let s = gaussian_mechanism_sigma(0.5, 0.05, 1.0);
        assert!((s - 5.074_544_964_718_08).abs() < 1e-9, "{s}");
    }

    #[test]
    fn calibrated_config_satisfies_both_constraints() {
        let report = calibrate(0.5, 0.01, 0.5, 10.0, 0.01, 32).unwrap();
        let c = report.config;
        assert!(c.satisfies_tail_constraint());
        assert!(c.satisfies_sigma_bound());
        c.validate().unwrap();
        assert_eq!(c.beta, bandwidth_for(c.k, 10.0, 0.01, 32));
        assert!(report.delta_prime > 0.0 && report.delta_prime < 1.0);
    }

    #[test]
    fn smaller_epsilon_needs_more_noise() {
        let a = calibrate(0.3, 0.01, 0.5, 10.0, 0.01, 32).unwrap();
        let b = calibrate(0.6, 0.01, 0.5, 10.0, 0.01, 32).unwrap();
        assert!(a.config.sigma > b.config.sigma);
    }

    #[test]
    fn calibration_input_checks() {
        assert!(matches!(calibrate(1.0, 0.01, 1.0, 1.0, 0.01, 32), Err(Error::Domain(_))));
        assert!(matches!(calibrate(0.5, 0.0, 1.0, 1.0, 0.01, 32), Err(Error::Domain(_))));
        assert!(matches!(calibrate(0.5, 0.01, 1.0, 1.0, 0.01, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn infeasible_calibration_names_constraint() {
        // Large Lipschitz constant and learning rate: the k/beta feedback
        // diverges.
        match calibrate(0.01, 1e-6, 50.0, 100.0, 1.0, 1) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("2k > 8.68")),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_undersized_sigma() {
        let mut c = calibrate(0.5, 0.01, 0.5, 10.0, 0.01, 32).unwrap().config;
        c.sigma *= 0.5;
        assert!(matches!(c.validate(), Err(Error::Infeasible(_))));
        assert!(PrivacyConfig::disabled().validate().is_ok());
    }

    #[test]
    fn implied_epsilon_inverts_sigma_bound() {
        let s = sigma_lower_bound(0.4, 0.02, 0.7, 3.0);
        assert!((implied_epsilon(s, 0.02, 0.7, 3.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn fixed_sigma_meets_both_constraints() {
        for sigma in [1.0, 5.0] {
            let c = fixed_sigma(sigma, 0.05, 1.0, 100.0, 0.003, 8).unwrap();
            assert_eq!(c.sigma, sigma);
            assert!(c.satisfies_tail_constraint() && c.satisfies_sigma_bound());
            assert!((c.beta - bandwidth_for(c.k, 100.0, 0.003, 8)).abs() < 1e-9 * c.beta);
            assert!((c.k - (4.34 * c.beta.sqrt() * sigma + 1.0)).abs() < 1e-9);
            assert!((c.epsilon - implied_epsilon(sigma, 0.05, 1.0, c.beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_sigma_rejects_large_implied_epsilon() {
        assert!(matches!(fixed_sigma(1e-3, 0.05, 10.0, 1.0, 1.0, 1), Err(Error::Infeasible(_))));
    }
}
