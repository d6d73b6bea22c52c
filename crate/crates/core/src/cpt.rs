//! Cumulative prospect theory (CPT) values.
//!
//! A CPT value replaces the expectation of a random variable `Y` with
//!
//! ```text
//! rho(Y) = ∫_0^∞ w+(P(u+(Y) > z)) dz  -  ∫_0^∞ w-(P(u-(Y) > z)) dz
//! ```
//!
//! where `u±` are utilities applied separately to gains and losses and `w±`
//! are inverted-S probability weighting functions applied to cumulative tail
//! probabilities. For a finite-support variable both integrals collapse to
//! sums of utilities times differences of weighted tails, which is what every
//! routine in this module evaluates.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest weighting exponent accepted. Below roughly 0.279 the
/// Tversky–Kahneman weighting function stops being monotone.
pub const MIN_WEIGHT_EXPONENT: f64 = 0.28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CptMode {
    /// Power utilities and Tversky–Kahneman probability weights.
    Cpt,
    /// Identity utilities and weights; the CPT value is the mean.
    Expectation,
}

/// Parameters of the risk metric: power utilities `|x|^a` on gains and
/// losses and weighting functions
/// `w(p) = p^e / (p^e + (1 - p)^e)^(1/e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptSpec {
    pub gain_utility_exponent: f64,
    pub loss_utility_exponent: f64,
    pub gain_weight_exponent: f64,
    pub loss_weight_exponent: f64,
    pub mode: CptMode,
}

impl Default for CptSpec {
    fn default() -> Self {
        Self::standard()
    }
}

impl CptSpec {
    pub fn new(
        gain_utility_exponent: f64,
        loss_utility_exponent: f64,
        gain_weight_exponent: f64,
        loss_weight_exponent: f64,
        mode: CptMode,
    ) -> Result<Self> {
        let spec = Self {
            gain_utility_exponent,
            loss_utility_exponent,
            gain_weight_exponent,
            loss_weight_exponent,
            mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Utility exponent 0.88 on both sides, weight exponents 0.61 (gains) and
    /// 0.69 (losses).
    pub fn standard() -> Self {
        Self {
            gain_utility_exponent: 0.88,
            loss_utility_exponent: 0.88,
            gain_weight_exponent: 0.61,
            loss_weight_exponent: 0.69,
            mode: CptMode::Cpt,
        }
    }

    /// The risk-neutral special case: `rho(Y) = E[Y]`.
    pub fn expectation() -> Self {
        Self {
            mode: CptMode::Expectation,
            ..Self::standard()
        }
    }

    pub fn with_mode(self, mode: CptMode) -> Self {
        Self { mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gain_utility_exponent", self.gain_utility_exponent),
            ("loss_utility_exponent", self.loss_utility_exponent),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(alloc::format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("gain_weight_exponent", self.gain_weight_exponent),
            ("loss_weight_exponent", self.loss_weight_exponent),
        ] {
            if !(MIN_WEIGHT_EXPONENT..=1.0).contains(&v) {
                return Err(Error::domain(alloc::format!(
                    "{name} must lie in [{MIN_WEIGHT_EXPONENT}, 1], got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `u+(x)`: zero on `x <= 0`.
    pub fn utility_plus(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self.mode {
            CptMode::Expectation => x,
            CptMode::Cpt => libm::pow(x, self.gain_utility_exponent),
        }
    }

    /// `u-(x)`: zero on `x >= 0`, `|x|^a` below.
    pub fn utility_minus(&self, x: f64) -> f64 {
        if x >= 0.0 {
            return 0.0;
        }
        match self.mode {
            CptMode::Expectation => -x,
            CptMode::Cpt => libm::pow(-x, self.loss_utility_exponent),
        }
    }

    pub fn weight_plus(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(self.gain_weight(p))
    }

    pub fn weight_minus(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(self.loss_weight(p))
    }

    fn gain_weight(&self, p: f64) -> f64 {
        match self.mode {
            CptMode::Expectation => p,
            CptMode::Cpt => tk_weight(p, self.gain_weight_exponent),
        }
    }

    fn loss_weight(&self, p: f64) -> f64 {
        match self.mode {
            CptMode::Expectation => p,
            CptMode::Cpt => tk_weight(p, self.loss_weight_exponent),
        }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(alloc::format!("probability {p} outside [0, 1]")))
    }
}

fn tk_weight(p: f64, exponent: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let a = libm::pow(p, exponent);
    let b = libm::pow(1.0 - p, exponent);
    a / libm::pow(a + b, 1.0 / exponent)
}

/// A finite-support random variable with outcomes kept in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    outcomes: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    /// Builds a distribution from `(value, probability)` pairs in any order.
    pub fn new(mut outcomes: Vec<(f64, f64)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::domain("empty distribution"));
        }
        let mut total = 0.0;
        for &(y, p) in &outcomes {
            if !y.is_finite() {
                return Err(Error::domain(alloc::format!("non-finite outcome {y}")));
            }
            check_probability(p)?;
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(alloc::format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[(f64, f64)] {
        &self.outcomes
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().map(|&(y, p)| y * p).sum()
    }

    /// Shifts every outcome by `d`.
    pub fn translate(&self, d: f64) -> Self {
        Self {
            outcomes: self.outcomes.iter().map(|&(y, p)| (y + d, p)).collect(),
        }
    }
}

/// CPT value of a finite-support variable.
///
/// Gains use upper tails `G_i = sum_{j >= i} p_j` and losses lower tails
/// `F_i = sum_{j <= i} p_j`; each outcome contributes its utility times the
/// increment of the weighted tail it closes.
pub fn cpt_value_discrete(dist: &DiscreteDistribution, spec: &CptSpec) -> f64 {
    let outcomes = dist.outcomes();

    let mut gains = 0.0;
    let mut upper = 0.0;
    for &(y, p) in outcomes.iter().rev() {
        if y <= 0.0 {
            break;
        }
        let next = upper + p;
        gains += spec.utility_plus(y) * (spec.gain_weight(next.min(1.0)) - spec.gain_weight(upper));
        upper = next;
    }

    let mut losses = 0.0;
    let mut lower = 0.0;
    for &(y, p) in outcomes {
        if y >= 0.0 {
            break;
        }
        let next = lower + p;
        losses += spec.utility_minus(y) * (spec.loss_weight(next.min(1.0)) - spec.loss_weight(lower));
        lower = next;
    }

    gains - losses
}

/// CPT value of a continuous variable given by its quantile function,
/// integrated with the midpoint rule on the probability axis.
///
/// The variable is replaced by `steps` equiprobable atoms at the midpoint
/// quantiles `q((i + 1/2) / steps)`, which is exact for step distributions
/// aligned with the grid.
pub fn cpt_value_continuous<F>(quantile: F, spec: &CptSpec, steps: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if steps < 100 {
        return Err(Error::domain(alloc::format!(
            "integration_steps must be at least 100, got {steps}"
        )));
    }
    let n = steps as f64;
    let mut atoms = Vec::with_capacity(steps);
    for i in 0..steps {
        let y = quantile((i as f64 + 0.5) / n);
        if !y.is_finite() {
            return Err(Error::domain(alloc::format!("non-finite quantile {y}")));
        }
        if let Some(&prev) = atoms.last() {
            if y < prev {
                return Err(Error::domain("quantile function is not monotone"));
            }
        }
        atoms.push(y);
    }
    Ok(sorted_sample_value(&atoms, spec))
}

/// Order-statistic CPT estimate from i.i.d. samples.
///
/// With sorted samples `X[1] <= ... <= X[N]`:
///
/// ```text
/// rho+ = sum_i u+(X[i]) (w+((N - i + 1) / N) - w+((N - i) / N))
/// rho- = sum_i u-(X[i]) (w-(i / N) - w-((i - 1) / N))
/// ```
pub fn estimate_cpt_from_samples(samples: &[f64], spec: &CptSpec) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::domain(alloc::format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::domain(alloc::format!("non-finite sample {bad}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_sample_value(&sorted, spec))
}

fn sorted_sample_value(sorted: &[f64], spec: &CptSpec) -> f64 {
    let n = sorted.len();
    let nf = n as f64;

    // Gains walk down from the largest sample: X[i] owns the band of upper
    // tail between (N - i) / N and (N - i + 1) / N.
    let mut gains = 0.0;
    let mut w_prev = 0.0;
    for (k, &x) in sorted.iter().rev().enumerate() {
        if x <= 0.0 {
            break;
        }
        let w_next = spec.gain_weight((k + 1) as f64 / nf);
        gains += spec.utility_plus(x) * (w_next - w_prev);
        w_prev = w_next;
    }

    let mut losses = 0.0;
    let mut w_prev = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        if x >= 0.0 {
            break;
        }
        let w_next = spec.loss_weight((k + 1) as f64 / nf);
        losses += spec.utility_minus(x) * (w_next - w_prev);
        w_prev = w_next;
    }

    gains - losses
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn weight_endpoints_and_midpoints() {
        let spec = CptSpec::standard();
        assert_eq!(spec.weight_plus(0.0).unwrap(), 0.0);
        assert_eq!(spec.weight_plus(1.0).unwrap(), 1.0);
        assert_eq!(spec.weight_minus(0.0).unwrap(), 0.0);
        assert_eq!(spec.weight_minus(1.0).unwrap(), 1.0);
        // mpmath, 40 digits
        assert!((spec.weight_plus(0.5).unwrap() - 0.420_639_354_335_756).abs() < 1e-12);
        assert!((spec.weight_minus(0.5).unwrap() - 0.453_987_549_524_030).abs() < 1e-12);
    }

    #[test]
    fn weight_rejects_out_of_range() {
        let spec = CptSpec::standard();
        assert!(matches!(spec.weight_plus(-0.1), Err(Error::Domain(_))));
        assert!(matches!(spec.weight_minus(1.5), Err(Error::Domain(_))));
        assert!(spec.weight_plus(f64::NAN).is_err());
    }

    #[test]
    fn weights_monotone_on_fine_grid() {
        let spec = CptSpec::standard();
        let mut prev = (0.0, 0.0);
        for i in 0..=10_000 {
            let p = i as f64 / 10_000.0;
            let cur = (spec.weight_plus(p).unwrap(), spec.weight_minus(p).unwrap());
            assert!(cur.0 >= prev.0 && cur.1 >= prev.1, "non-monotone at {p}");
            prev = cur;
        }
    }

    #[test]
    fn utilities() {
        let spec = CptSpec::standard();
        assert_eq!(spec.utility_plus(-3.0), 0.0);
        assert_eq!(spec.utility_plus(1.0), 1.0);
        assert_eq!(spec.utility_minus(2.0), 0.0);
        assert!((spec.utility_minus(-2.0) - 1.840_375_301_249_750).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(CptSpec::new(0.88, 0.88, 0.61, 0.69, CptMode::Cpt).is_ok());
        assert!(CptSpec::new(0.0, 0.88, 0.61, 0.69, CptMode::Cpt).is_err());
        assert!(CptSpec::new(0.88, 0.88, 1.2, 0.69, CptMode::Cpt).is_err());
        assert!(CptSpec::new(0.88, 0.88, 0.61, 0.1, CptMode::Cpt).is_err());
    }

    #[test]
    fn discrete_examples() {
        let one = DiscreteDistribution::new(vec![(1.0, 1.0)]).unwrap();
        assert_eq!(cpt_value_discrete(&one, &CptSpec::expectation()), 1.0);

        let coin = DiscreteDistribution::new(vec![(1.0, 0.5), (-1.0, 0.5)]).unwrap();
        assert_eq!(cpt_value_discrete(&coin, &CptSpec::expectation()), 0.0);
        let v = cpt_value_discrete(&coin, &CptSpec::standard());
        assert!((v - (-0.033_348_195_188_273)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn discrete_rejects_bad_input() {
        assert!(DiscreteDistribution::new(vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 0.5)]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 1.5), (2.0, -0.5)]).is_err());
        assert!(DiscreteDistribution::new(vec![(f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn continuous_examples() {
        let e = CptSpec::expectation();
        let v = cpt_value_continuous(|_| 1.0, &e, 1000).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        let v = cpt_value_continuous(|t| t, &e, 10_000).unwrap();
        assert!((v - 0.5).abs() < 1e-3);

        // Uniform on [-1, 1] under the standard spec; reference from adaptive
        // quadrature of the tail-integral definition at 40 digits.
        let v = cpt_value_continuous(|t| 2.0 * t - 1.0, &CptSpec::standard(), 10_000).unwrap();
        assert!((v - (-0.005_405_289_982_441)).abs() < 1e-4, "{v}");
    }

    #[test]
    fn continuous_rejects_bad_input() {
        let e = CptSpec::expectation();
        assert!(cpt_value_continuous(|t| t, &e, 50).is_err());
        assert!(cpt_value_continuous(|t| -t, &e, 1000).is_err());
    }

    #[test]
    fn continuous_converges_to_discrete_for_steps() {
        // Three-atom step quantile aligned with a 1000-step grid.
        let q = |t: f64| {
            if t < 0.2 {
                -2.0
            } else if t < 0.7 {
                0.5
            } else {
                3.0
            }
        };
        let dist = DiscreteDistribution::new(vec![(-2.0, 0.2), (0.5, 0.5), (3.0, 0.3)]).unwrap();
        let spec = CptSpec::standard();
        let cont = cpt_value_continuous(q, &spec, 1000).unwrap();
        assert!((cont - cpt_value_discrete(&dist, &spec)).abs() < 1e-12);
    }

    #[test]
    fn estimator_examples() {
        let e = CptSpec::expectation();
        assert_eq!(estimate_cpt_from_samples(&[5.0; 4], &e).unwrap(), 5.0);
        assert_eq!(estimate_cpt_from_samples(&[-1.0, 1.0], &e).unwrap(), 0.0);
        assert!(estimate_cpt_from_samples(&[1.0], &e).is_err());
        assert!(estimate_cpt_from_samples(&[1.0, f64::INFINITY], &e).is_err());
    }

    #[test]
    fn estimator_matches_discrete_on_exact_proportions() {
        // Samples realising the probabilities exactly reproduce the discrete
        // value since the empirical tails coincide with the true ones.
        let dist = DiscreteDistribution::new(vec![(-1.0, 0.25), (0.5, 0.5), (2.0, 0.25)]).unwrap();
        let samples = [2.0, -1.0, 0.5, 0.5];
        let spec = CptSpec::standard();
        let est = estimate_cpt_from_samples(&samples, &spec).unwrap();
        assert!((est - cpt_value_discrete(&dist, &spec)).abs() < 1e-12);
    }

    fn arb_distribution() -> impl Strategy<Value = DiscreteDistribution> {
        prop::collection::vec((-10.0f64..10.0, 0.01f64..1.0), 1..8).prop_map(|raw| {
            let total: f64 = raw.iter().map(|r| r.1).sum();
            let mut outcomes: Vec<(f64, f64)> = raw.iter().map(|&(y, w)| (y, w / total)).collect();
            // absorb rounding into the last probability
            let head: f64 = outcomes[..outcomes.len() - 1].iter().map(|o| o.1).sum();
            outcomes.last_mut().unwrap().1 = 1.0 - head;
            DiscreteDistribution::new(outcomes).unwrap()
        })
    }

    proptest! {
        #[test]
        fn expectation_mode_is_the_mean(dist in arb_distribution()) {
            let v = cpt_value_discrete(&dist, &CptSpec::expectation());
            prop_assert!((v - dist.mean()).abs() < 1e-12);
        }

        #[test]
        fn expectation_mode_translation(dist in arb_distribution(), d in -5.0f64..5.0) {
            let spec = CptSpec::expectation();
            let shifted = cpt_value_discrete(&dist.translate(d), &spec);
            prop_assert!((shifted - (cpt_value_discrete(&dist, &spec) + d)).abs() < 1e-12);
        }

        #[test]
        fn stochastic_dominance_is_monotone(
            dist in arb_distribution(),
            bumps in prop::collection::vec(0.0f64..3.0, 8),
        ) {
            // B shifts every outcome of A upward, so B dominates A.
            let b = DiscreteDistribution::new(
                dist.outcomes().iter().zip(&bumps).map(|(&(y, p), &d)| (y + d, p)).collect(),
            ).unwrap();
            let spec = CptSpec::standard();
            prop_assert!(cpt_value_discrete(&b, &spec) >= cpt_value_discrete(&dist, &spec) - 1e-12);
        }

        #[test]
        fn estimator_is_order_invariant(mut xs in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let spec = CptSpec::standard();
            let a = estimate_cpt_from_samples(&xs, &spec).unwrap();
            xs.reverse();
            let b = estimate_cpt_from_samples(&xs, &spec).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
