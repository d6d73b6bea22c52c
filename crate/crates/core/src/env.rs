use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;

/// An episodic MDP the trainer can sample from.
///
/// States are plain values: sampling several transitions out of the same
/// state only requires calling [`step`](Environment::step) repeatedly on it.
pub trait Environment {
    type State: Clone;

    fn num_actions(&self) -> usize;

    /// Length of the vector returned by [`featurize`](Environment::featurize).
    fn feature_dim(&self) -> usize;

    fn discount(&self) -> f64;

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// A non-terminal state drawn from a distribution covering the whole
    /// state space. Defaults to [`reset`](Environment::reset).
    fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State {
        self.reset(rng)
    }

    /// Samples one transition. Stepping a terminal state is a usage error.
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R) -> Result<(Self::State, f64)>;

    fn is_terminal(&self, state: &Self::State) -> bool;

    fn featurize(&self, state: &Self::State) -> Vec<f64>;

    /// As [`featurize`](Environment::featurize), overwriting `out`.
    fn featurize_into(&self, state: &Self::State, out: &mut Vec<f64>) {
        *out = self.featurize(state);
    }

    /// Number of penalised regions whose visits are tracked.
    fn num_obstacles(&self) -> usize {
        0
    }

    /// Index of the penalised region `state` lies in, if any.
    fn obstacle_index(&self, _state: &Self::State) -> Option<usize> {
        None
    }
}
