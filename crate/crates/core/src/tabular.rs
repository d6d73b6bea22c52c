//! Finite MDPs and the exact CPT Q-iteration operator.
//!
//! `(T_pi Q)(s, a)` is the CPT value of the one-step random variable
//! `r(s, a) + gamma * sum_b pi(b | s') Q(s', b)` with `s' ~ P(. | s, a)`,
//! whose finite support is enumerated exactly. These routines serve as
//! oracles for the sample-based trainer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::cpt::{cpt_value_discrete, CptSpec, DiscreteDistribution};
use crate::env::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `P(s' | s, a)` at `(s * num_actions + a) * num_states + s'`.
    transitions: Vec<f64>,
    /// `r(s, a)` at `s * num_actions + a`.
    rewards: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    /// `transitions[s][a][s']` and `rewards[s][a]`.
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let num_states = transitions.len();
        if num_states == 0 {
            return Err(Error::domain("MDP needs at least one state"));
        }
        let num_actions = transitions[0].len();
        if num_actions == 0 {
            return Err(Error::domain("MDP needs at least one action"));
        }
        if !(gamma >= 0.0 && gamma < 1.0) {
            return Err(Error::domain(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if rewards.len() != num_states || rewards.iter().any(|r| r.len() != num_actions) {
            return Err(Error::domain("reward table shape does not match transitions"));
        }
        let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, per_action) in transitions.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(Error::domain(format!("state {s} has the wrong number of actions")));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::domain(format!("P(.|{s},{a}) has the wrong length")));
                }
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::domain(format!("P(.|{s},{a}) has entries outside [0, 1]")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::domain(format!("P(.|{s},{a}) sums to {total}")));
                }
                flat.extend_from_slice(row);
            }
        }
        let rewards: Vec<f64> = rewards.into_iter().flatten().collect();
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::domain("rewards must be finite"));
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions: flat,
            rewards,
            gamma,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma < 1.0) {
            return Err(Error::domain(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    fn table_len(&self) -> usize {
        self.num_states * self.num_actions
    }

    fn check_table(&self, name: &str, table: &[f64]) -> Result<()> {
        if table.len() != self.table_len() {
            return Err(Error::usage(format!(
                "{name} has {} entries, expected {}",
                table.len(),
                self.table_len()
            )));
        }
        Ok(())
    }

    /// `sum_b pi(b | s) Q(s, b)` for every state.
    fn state_values(&self, q: &[f64], policy: &[f64]) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| {
                let row = s * self.num_actions;
                (0..self.num_actions).map(|b| policy[row + b] * q[row + b]).sum()
            })
            .collect()
    }

    /// The exact distribution of `r(s, a) + gamma * V(s')`.
    pub fn one_step_distribution(&self, s: usize, a: usize, values: &[f64]) -> DiscreteDistribution {
        let r = self.reward(s, a);
        let outcomes = self
            .next_distribution(s, a)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(next, &p)| (r + self.gamma * values[next], p))
            .collect();
        DiscreteDistribution::new(outcomes).expect("rows validated at construction")
    }
}

/// `(T_pi Q)(s, a) = rho(r(s, a) + gamma * sum_{s'} P(s'|s,a) sum_{a'} pi(a'|s') Q(s', a'))`,
/// tables indexed `s * num_actions + a`.
pub fn cpt_q_operator(mdp: &TabularMdp, q: &[f64], policy: &[f64], spec: &CptSpec) -> Result<Vec<f64>> {
    mdp.check_table("q table", q)?;
    mdp.check_table("policy", policy)?;
    let values = mdp.state_values(q, policy);
    let mut out = vec![0.0; mdp.table_len()];
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let dist = mdp.one_step_distribution(s, a, &values);
            out[s * mdp.num_actions + a] = cpt_value_discrete(&dist, spec);
        }
    }
    Ok(out)
}

/// The classical policy-evaluation operator
/// `r(s, a) + gamma * sum_{s'} P(s'|s,a) V(s')`.
pub fn bellman_operator(mdp: &TabularMdp, q: &[f64], policy: &[f64]) -> Result<Vec<f64>> {
    mdp.check_table("q table", q)?;
    mdp.check_table("policy", policy)?;
    let values = mdp.state_values(q, policy);
    let mut out = vec![0.0; mdp.table_len()];
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let expected: f64 = mdp
                .next_distribution(s, a)
                .iter()
                .zip(&values)
                .map(|(p, v)| p * v)
                .sum();
            out[s * mdp.num_actions + a] = mdp.reward(s, a) + mdp.gamma * expected;
        }
    }
    Ok(out)
}

/// One-hot greedy policy; ties go to the lowest action index.
pub fn greedy_policy(q: &[f64], num_actions: usize) -> Vec<f64> {
    let mut policy = vec![0.0; q.len()];
    for (row, chunk) in q.chunks(num_actions).enumerate() {
        policy[row * num_actions + argmax(chunk)] = 1.0;
    }
    policy
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Iterates `Q <- T_{greedy(Q)} Q` from zero until successive iterates are
/// within `tol` in sup norm. Returns the table and the iteration count.
pub fn value_iteration(mdp: &TabularMdp, spec: &CptSpec, tol: f64, max_iterations: usize) -> Result<(Vec<f64>, usize)> {
    let mut q = vec![0.0; mdp.table_len()];
    for it in 1..=max_iterations {
        let policy = greedy_policy(&q, mdp.num_actions);
        let next = cpt_q_operator(mdp, &q, &policy, spec)?;
        let diff = sup_distance(&next, &q);
        q = next;
        if diff < tol {
            return Ok((q, it));
        }
    }
    Err(Error::domain(format!("value iteration did not converge in {max_iterations} iterations")))
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sampling interface: episodes start in a uniformly random state and never
/// terminate; features are one-hot state indicators.
impl Environment for TabularMdp {
    type State = usize;

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn feature_dim(&self) -> usize {
        self.num_states
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.num_states)
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, rng: &mut R) -> Result<(usize, f64)> {
        if *state >= self.num_states || action >= self.num_actions {
            return Err(Error::usage(format!("state {state} / action {action} out of range")));
        }
        let u: f64 = rng.random();
        let row = self.next_distribution(*state, action);
        let mut acc = 0.0;
        let mut next = self.num_states - 1;
        for (s, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = s;
                break;
            }
        }
        // Guard against rounding in the cumulative sum landing on a
        // zero-probability tail state.
        while row[next] == 0.0 && next > 0 {
            next -= 1;
        }
        Ok((next, self.reward(*state, action)))
    }

    fn is_terminal(&self, _state: &usize) -> bool {
        false
    }

    fn featurize(&self, state: &usize) -> Vec<f64> {
        let mut f = vec![0.0; self.num_states];
        f[*state] = 1.0;
        f
    }
}
