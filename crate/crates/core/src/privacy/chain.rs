//! Chain-correlated Gaussian-process noise.
//!
//! Noise for the `k`-th state of a chain lives at the odd grid point
//! `x_{2k+1} = (2k + 1) / 2n` of a GP with kernel `exp(-beta |x - y|)` on
//! `[0, 1]`. Its two flanking even points `x_{2k}` and `x_{2k+2}` are kept as
//! latent anchors: the right anchor is drawn from the Markov transition of
//! the kernel and the released value from the closed-form conditional on the
//! two anchors,
//!
//! ```text
//! mean = e^{-b} / (1 + e^{-2b}) * (left + right)
//! var  = sigma * (1 - e^{-2b}) / (1 + e^{-2b})
//! ```
//!
//! with `b = beta / 2n`. Drawing anchors and midpoints in this order yields an
//! exact sample of the GP restricted to the visited grid points.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PrivacyConfig, TAIL_CONSTANT};
use crate::error::{Error, Result};

/// Conditional-mean and conditional-variance coefficients of a grid midpoint
/// given its two neighbours, for grid bandwidth `beta_n`.
pub fn conditional_coefficients(beta_n: f64) -> Result<(f64, f64)> {
    if !(beta_n > 0.0) {
        return Err(Error::domain(alloc::format!("beta_n must be positive, got {beta_n}")));
    }
    let e1 = libm::exp(-beta_n);
    let e2 = libm::exp(-2.0 * beta_n);
    let denom = 1.0 + e2;
    // -expm1(-2b) keeps the variance coefficient positive for tiny beta_n.
    Ok((e1 / denom, -libm::expm1(-2.0 * beta_n) / denom))
}

/// How the grid resolution `n` (and with it `beta_n = beta / 2n`) is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainResolution {
    /// `n` is the chain length including the point being drawn.
    Growing,
    /// `n` is fixed; the chain may hold at most `n` points.
    Fixed(usize),
}

/// Per-action noise histories aligned with the visited-state chain.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChain {
    per_action_values: Vec<Vec<f64>>,
    anchors: Vec<f64>,
    beta: f64,
    resolution: ChainResolution,
}

impl NoiseChain {
    pub fn new(num_actions: usize, beta: f64, resolution: ChainResolution) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::usage("noise chain needs at least one action"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain(alloc::format!("beta must be positive, got {beta}")));
        }
        if resolution == ChainResolution::Fixed(0) {
            return Err(Error::domain("fixed chain resolution must be positive"));
        }
        Ok(Self {
            per_action_values: vec![Vec::new(); num_actions],
            anchors: Vec::new(),
            beta,
            resolution,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.per_action_values.len()
    }

    pub fn len(&self) -> usize {
        self.per_action_values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self, action: usize) -> &[f64] {
        &self.per_action_values[action]
    }

    /// Bandwidth in use for the most recent draw (or the next one, if the
    /// chain is empty).
    pub fn beta_n(&self) -> f64 {
        self.beta_n_at(self.len().max(1) - 1)
    }

    fn beta_n_at(&self, position: usize) -> f64 {
        let n = match self.resolution {
            ChainResolution::Growing => position + 1,
            ChainResolution::Fixed(n) => n,
        };
        self.beta / (2.0 * n as f64)
    }

    fn next_position(&self) -> Result<usize> {
        let position = self.len();
        if let ChainResolution::Fixed(n) = self.resolution {
            if position >= n {
                return Err(Error::usage(alloc::format!(
                    "chain with fixed resolution {n} is full"
                )));
            }
        }
        Ok(position)
    }

    /// Draws noise for the next chain position for every action and appends
    /// it. With privacy disabled the draw is all zeros, still appended so the
    /// chain stays aligned with the visited states.
    pub fn sample<R: Rng + ?Sized>(&mut self, config: &PrivacyConfig, rng: &mut R) -> Result<Vec<f64>> {
        let position = self.next_position()?;
        let num_actions = self.num_actions();
        if !config.enabled {
            for values in &mut self.per_action_values {
                values.push(0.0);
            }
            return Ok(vec![0.0; num_actions]);
        }
        let beta_n = self.beta_n_at(position);
        let clip = 2.0 * config.k;
        let mut out = Vec::with_capacity(num_actions);
        let mut anchors = Vec::with_capacity(num_actions);
        for a in 0..num_actions {
            let left = self.anchors.get(a).copied();
            let (anchor, value) = draw_midpoint(left, beta_n, config.sigma, rng);
            let value = value.clamp(-clip, clip);
            anchors.push(anchor);
            self.per_action_values[a].push(value);
            out.push(value);
        }
        self.anchors = anchors;
        Ok(out)
    }

    /// Draws noise for the next chain position without recording it, e.g.
    /// for look-ahead states that are never added to the chain.
    pub fn peek<R: Rng + ?Sized>(&self, config: &PrivacyConfig, rng: &mut R) -> Result<Vec<f64>> {
        let position = self.next_position()?;
        if !config.enabled {
            return Ok(vec![0.0; self.num_actions()]);
        }
        let beta_n = self.beta_n_at(position);
        let clip = 2.0 * config.k;
        Ok((0..self.num_actions())
            .map(|a| {
                let left = self.anchors.get(a).copied();
                draw_midpoint(left, beta_n, config.sigma, rng).1.clamp(-clip, clip)
            })
            .collect())
    }
}

/// Draws the right anchor and the midpoint value for one action. `left` is
/// `None` at the start of a chain, where the left anchor is drawn from the
/// stationary marginal.
fn draw_midpoint<R: Rng + ?Sized>(left: Option<f64>, beta_n: f64, sigma: f64, rng: &mut R) -> (f64, f64) {
    let left = left.unwrap_or_else(|| libm::sqrt(sigma) * rng.sample::<f64, _>(StandardNormal));
    // Anchors are two grid steps apart: correlation e^{-2 beta_n}.
    let rho2 = libm::exp(-2.0 * beta_n);
    let anchor_var = -sigma * libm::expm1(-4.0 * beta_n);
    let right = rho2 * left + libm::sqrt(anchor_var) * rng.sample::<f64, _>(StandardNormal);
    let (mean_coeff, var_coeff) =
        conditional_coefficients(beta_n).expect("beta_n is positive by construction");
    let value = mean_coeff * (left + right) + libm::sqrt(sigma * var_coeff) * rng.sample::<f64, _>(StandardNormal);
    (right, value)
}

/// Fraction of `trials` unclipped chains of `chain_length` points (fixed
/// resolution `n = chain_length`) whose maximum exceeds
/// `8.68 sqrt(beta) sigma + u`.
pub fn tail_exceedance_rate<R: Rng + ?Sized>(
    beta: f64,
    sigma: f64,
    u: f64,
    chain_length: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::domain(alloc::format!("u must be positive, got {u}")));
    }
    if !(beta > 0.0 && sigma > 0.0) {
        return Err(Error::domain("beta and sigma must be positive"));
    }
    if chain_length == 0 || trials == 0 {
        return Err(Error::domain("chain_length and trials must be positive"));
    }
    let threshold = tail_threshold(beta, sigma, u);
    let beta_n = beta / (2.0 * chain_length as f64);
    let mut exceed = 0usize;
    for _ in 0..trials {
        let mut left = None;
        let mut max = f64::NEG_INFINITY;
        for _ in 0..chain_length {
            let (anchor, value) = draw_midpoint(left, beta_n, sigma, rng);
            left = Some(anchor);
            max = max.max(value);
        }
        if max > threshold {
            exceed += 1;
        }
    }
    Ok(exceed as f64 / trials as f64)
}

/// `8.68 sqrt(beta) sigma + u`.
pub fn tail_threshold(beta: f64, sigma: f64, u: f64) -> f64 {
    TAIL_CONSTANT * libm::sqrt(beta) * sigma + u
}
