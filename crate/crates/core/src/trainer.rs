//! Privacy-preserving CPT Q-learning.
//!
//! Each batch starts from a fresh episode and an empty visited-state chain.
//! For every sample the current state is appended to the chain and receives
//! correlated noise, an action is picked greedily on the noisy Q values, and
//! the TD target is the CPT estimate over `n_max` one-step continuations
//! evaluated on a frozen target network. The agent then moves to the
//! continuation with the largest sampled return.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpt::{estimate_cpt_from_samples, CptSpec};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::network::{Activation, Gradient, QNetwork};
use crate::privacy::{ChainResolution, NoiseChain, PrivacyConfig};
use crate::tabular::argmax;

/// Distribution `pi(b | s')` used to average the bootstrapped values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapPolicy {
    /// All mass on the largest noisy value; ties go to the lowest index.
    Greedy,
    /// Softmax over the noisy values with temperature 1.
    Softmax,
}

/// Action selection during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    MaxQ,
    /// Softmax over Q with temperature 1.
    RandQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Number of batches.
    pub horizon: usize,
    pub batch_size: usize,
    /// Samples per CPT estimate.
    pub n_max: usize,
    pub gamma: f64,
    pub cpt: CptSpec,
    pub privacy: PrivacyConfig,
    pub seed: u64,
    /// Hidden layer widths; empty gives a single affine layer.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bootstrap: BootstrapPolicy,
    /// Probability of replacing the noisy-greedy action by a uniform one.
    pub exploration_epsilon: f64,
    /// On reaching a terminal state, restart the episode and keep filling
    /// the batch; otherwise the batch ends early.
    pub restart_on_terminal: bool,
    /// Start every batch (and every restart) from
    /// [`Environment::random_state`] instead of [`Environment::reset`].
    pub exploring_starts: bool,
    pub chain_resolution: ChainResolution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            horizon: 2000,
            batch_size: 32,
            n_max: 20,
            gamma: 0.9,
            cpt: CptSpec::standard(),
            privacy: PrivacyConfig::disabled(),
            seed: 0,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            bootstrap: BootstrapPolicy::Greedy,
            exploration_epsilon: 0.0,
            restart_on_terminal: true,
            exploring_starts: false,
            chain_resolution: ChainResolution::Growing,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be at least 1"));
        }
        if self.n_max < 2 {
            return Err(Error::domain(format!("n_max must be at least 2, got {}", self.n_max)));
        }
        if self.horizon == 0 {
            return Err(Error::domain("horizon must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::domain(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.exploration_epsilon) {
            return Err(Error::domain(format!(
                "exploration_epsilon must lie in [0, 1], got {}",
                self.exploration_epsilon
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::domain("hidden widths must be positive"));
        }
        self.cpt.validate()?;
        self.privacy.validate()
    }

    /// Layer widths for an environment with the given feature and action
    /// counts.
    pub fn widths(&self, feature_dim: usize, num_actions: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(feature_dim);
        w.extend_from_slice(&self.hidden);
        w.push(num_actions);
        w
    }
}

/// States visited in the current batch together with their noise.
#[derive(Debug, Clone)]
pub struct VisitedChain<S> {
    states: Vec<S>,
    noise: NoiseChain,
}

impl<S: Clone> VisitedChain<S> {
    pub fn new(num_actions: usize, privacy: &PrivacyConfig, resolution: ChainResolution) -> Result<Self> {
        Ok(Self {
            states: Vec::new(),
            noise: NoiseChain::new(num_actions, privacy.beta, resolution)?,
        })
    }

    /// Appends `state` and returns its per-action noise.
    pub fn push<R: Rng + ?Sized>(&mut self, state: S, privacy: &PrivacyConfig, rng: &mut R) -> Result<Vec<f64>> {
        let noise = self.noise.sample(privacy, rng)?;
        self.states.push(state);
        Ok(noise)
    }

    /// Noise a state appended next would receive, without appending it.
    pub fn peek<R: Rng + ?Sized>(&self, privacy: &PrivacyConfig, rng: &mut R) -> Result<Vec<f64>> {
        self.noise.peek(privacy, rng)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn noise(&self) -> &NoiseChain {
        &self.noise
    }
}

/// Per-batch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_index: usize,
    pub samples: usize,
    pub mean_loss: f64,
    pub loss_sum: f64,
    pub loss_sum_sq: f64,
    /// Visits to each penalised region during the batch.
    pub obstacle_visits: Vec<u64>,
}

impl BatchRecord {
    pub fn loss_variance(&self) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        let n = self.samples as f64;
        (self.loss_sum_sq / n - self.mean_loss * self.mean_loss).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub network: QNetwork,
    pub records: Vec<BatchRecord>,
    /// Total visits to each penalised region over training.
    pub obstacle_visits: Vec<u64>,
    /// Lipschitz bound of the final network, computed when privacy is on.
    pub lipschitz_bound: Option<f64>,
}

impl TrainOutput {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_loss).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    /// Mean visits per episode to each penalised region.
    pub mean_visits: Vec<f64>,
    pub success_rate: f64,
    pub mean_return: f64,
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn bootstrap_value(values: &[f64], policy: BootstrapPolicy) -> f64 {
    match policy {
        BootstrapPolicy::Greedy => values[argmax(values)],
        BootstrapPolicy::Softmax => softmax(values).iter().zip(values).map(|(p, v)| p * v).sum(),
    }
}

/// CPT estimate of the one-step return of `action` in `state`.
///
/// Draws `cfg.n_max` independent transitions out of `state`, forms
/// `X = r + gamma * sum_b pi(b | s') (Q(s', b) + noise_b(s'))` with noise for
/// `s'` taken from the next chain position, and returns the CPT estimate of
/// the `X` sample together with the next state of the largest `X` (the
/// earliest on ties). Terminal next states contribute `X = r`.
pub fn cpt_pp_estimate<E: Environment, R: Rng + ?Sized>(
    env: &E,
    state: &E::State,
    action: usize,
    q: &QNetwork,
    chain: &VisitedChain<E::State>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, E::State)> {
    if cfg.n_max < 2 {
        return Err(Error::usage(format!("n_max must be at least 2, got {}", cfg.n_max)));
    }
    let mut samples = Vec::with_capacity(cfg.n_max);
    let mut best: Option<(f64, E::State)> = None;
    let (mut features, mut values, mut scratch) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.n_max {
        let (next, reward) = env.step(state, action, rng)?;
        let x = if env.is_terminal(&next) {
            reward
        } else {
            env.featurize_into(&next, &mut features);
            q.forward_into(&features, &mut values, &mut scratch)?;
            let noise = chain.peek(&cfg.privacy, rng)?;
            values.iter_mut().zip(&noise).for_each(|(v, n)| *v += n);
            reward + cfg.gamma * bootstrap_value(&values, cfg.bootstrap)
        };
        if best.as_ref().is_none_or(|(b, _)| x > *b) {
            best = Some((x, next));
        }
        samples.push(x);
    }
    let rho = estimate_cpt_from_samples(&samples, &cfg.cpt)?;
    Ok((rho, best.expect("n_max >= 2").1))
}

fn start_state<E: Environment, R: Rng + ?Sized>(env: &E, cfg: &TrainConfig, rng: &mut R) -> E::State {
    if cfg.exploring_starts {
        env.random_state(rng)
    } else {
        env.reset(rng)
    }
}

/// Runs training and reports each batch to `observer` as it completes.
pub fn train_with_observer<E, F>(env: &E, cfg: &TrainConfig, mut observer: F) -> Result<TrainOutput>
where
    E: Environment,
    F: FnMut(&BatchRecord),
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let widths = cfg.widths(env.feature_dim(), env.num_actions());
    let mut network = QNetwork::random(&widths, cfg.activation, &mut rng)?;
    let num_actions = env.num_actions();
    let mut records = Vec::with_capacity(cfg.horizon);
    let mut total_visits = vec![0u64; env.num_obstacles()];

    for batch_index in 0..cfg.horizon {
        let target = network.clone();
        let mut grad = Gradient::zeros_like(&network);
        let mut chain = VisitedChain::new(num_actions, &cfg.privacy, cfg.chain_resolution)?;
        let mut visits = vec![0u64; env.num_obstacles()];
        let mut loss_sum = 0.0;
        let mut loss_sum_sq = 0.0;
        let mut samples = 0usize;
        let mut state = start_state(env, cfg, &mut rng);

        for _ in 0..cfg.batch_size {
            let noise = chain.push(state.clone(), &cfg.privacy, &mut rng)?;
            let features = env.featurize(&state);
            let q = network.forward(&features)?;
            let noisy: Vec<f64> = q.iter().zip(&noise).map(|(v, n)| v + n).collect();
            let action = if cfg.exploration_epsilon > 0.0 && rng.random::<f64>() < cfg.exploration_epsilon {
                rng.random_range(0..num_actions)
            } else {
                argmax(&noisy)
            };

            let (rho, next) = cpt_pp_estimate(env, &state, action, &target, &chain, cfg, &mut rng)?;
            if cfg.privacy.enabled && (rho - q[action]).abs() > cfg.privacy.c_max {
                return Err(Error::CalibrationViolation(format!(
                    "TD error {} exceeds c_max = {} in batch {batch_index}",
                    rho - q[action],
                    cfg.privacy.c_max
                )));
            }
            let residual = noisy[action] - rho;
            let loss = 0.5 * residual * residual;
            loss_sum += loss;
            loss_sum_sq += loss * loss;
            samples += 1;
            network.accumulate_gradient(&features, action, residual, &mut grad)?;

            if let Some(i) = env.obstacle_index(&next) {
                visits[i] += 1;
            }
            if env.is_terminal(&next) {
                if !cfg.restart_on_terminal {
                    break;
                }
                state = start_state(env, cfg, &mut rng);
            } else {
                state = next;
            }
        }

        let divisor = if cfg.restart_on_terminal { cfg.batch_size } else { samples };
        network.apply_batch_update(&grad, cfg.learning_rate, divisor)?;
        total_visits.iter_mut().zip(&visits).for_each(|(t, v)| *t += v);
        let record = BatchRecord {
            batch_index,
            samples,
            mean_loss: loss_sum / samples as f64,
            loss_sum,
            loss_sum_sq,
            obstacle_visits: visits,
        };
        observer(&record);
        records.push(record);
    }

    let lipschitz_bound = cfg.privacy.enabled.then(|| network.lipschitz_upper_bound());
    Ok(TrainOutput {
        network,
        records,
        obstacle_visits: total_visits,
        lipschitz_bound,
    })
}

pub fn train<E: Environment>(env: &E, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_observer(env, cfg, |_| {})
}

/// Rolls out `episodes` noise-free episodes of at most `max_steps` steps
/// each without learning.
pub fn evaluate_policy<E: Environment, R: Rng + ?Sized>(
    env: &E,
    q: &QNetwork,
    episodes: usize,
    max_steps: usize,
    mode: ActionMode,
    rng: &mut R,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::usage("at least one evaluation episode is required"));
    }
    let mut visits = vec![0u64; env.num_obstacles()];
    let mut successes = 0usize;
    let mut total_return = 0.0;
    for _ in 0..episodes {
        let mut state = env.reset(rng);
        let mut discount = 1.0;
        for _ in 0..max_steps {
            let values = q.forward(&env.featurize(&state))?;
            let action = match mode {
                ActionMode::MaxQ => argmax(&values),
                ActionMode::RandQ => sample_index(&softmax(&values), rng),
            };
            let (next, reward) = env.step(&state, action, rng)?;
            total_return += discount * reward;
            discount *= env.discount();
            if let Some(i) = env.obstacle_index(&next) {
                visits[i] += 1;
            }
            if env.is_terminal(&next) {
                successes += 1;
                break;
            }
            state = next;
        }
    }
    let n = episodes as f64;
    Ok(EvalReport {
        episodes,
        mean_visits: visits.iter().map(|&v| v as f64 / n).collect(),
        success_rate: successes as f64 / n,
        mean_return: total_return / n,
    })
}
