//! Continuous-state gridworld with slip dynamics.
//!
//! The agent holds a real-valued position inside a `width x height` region;
//! its cell is the integer part of each coordinate. An action moves the agent
//! to the neighbouring cell in that direction with probability
//! `1 - slip_prob` and otherwise to one of the other feasible neighbours,
//! chosen uniformly. An action leading off the grid leaves the agent where it
//! is. On entering a new cell the continuous position is resampled uniformly
//! inside it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};

/// Integer cell coordinates `(column, row)`; row 0 is the bottom edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub usize, pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub cell: Cell,
    /// Positive; subtracted from the reward on every step that ends here.
    pub penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Up, Action::Down];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub x: f64,
    pub y: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub target: Cell,
    pub obstacles: Vec<Obstacle>,
    pub slip_prob: f64,
    pub step_reward: f64,
    pub target_reward: f64,
    pub gamma: f64,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self::default_world()
    }
}

impl GridWorld {
    /// 10 x 10 region, start bottom-left, target top-right, four single-cell
    /// obstacles with penalties 50, 25, 10 and 5. The obstacle layout is
    /// synthetic.
    pub fn default_world() -> Self {
        Self {
            width: 10,
            height: 10,
            start: Cell(0, 0),
            target: Cell(9, 9),
            obstacles: vec![
                Obstacle { cell: Cell(1, 1), penalty: 50.0 },
                Obstacle { cell: Cell(6, 5), penalty: 25.0 },
                Obstacle { cell: Cell(4, 7), penalty: 10.0 },
                Obstacle { cell: Cell(7, 2), penalty: 5.0 },
            ],
            slip_prob: 0.1,
            step_reward: -1.0,
            target_reward: 100.0,
            gamma: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("grid must have at least one cell"));
        }
        for (name, c) in [("start", self.start), ("target", self.target)] {
            if !self.contains(c) {
                return Err(Error::domain(format!("{name} cell {c:?} outside the grid")));
            }
        }
        if self.start == self.target {
            return Err(Error::domain("start and target coincide"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !self.contains(o.cell) {
                return Err(Error::domain(format!("obstacle {i} at {:?} outside the grid", o.cell)));
            }
            if o.cell == self.start || o.cell == self.target {
                return Err(Error::domain(format!("obstacle {i} overlaps start or target")));
            }
            if !(o.penalty > 0.0 && o.penalty.is_finite()) {
                return Err(Error::domain(format!("obstacle {i} penalty must be positive")));
            }
            if self.obstacles[..i].iter().any(|p| p.cell == o.cell) {
                return Err(Error::domain(format!("obstacle {i} duplicates an earlier cell")));
            }
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::domain(format!("slip_prob must lie in [0, 1), got {}", self.slip_prob)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::domain(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.step_reward.is_finite() && self.target_reward > 0.0 && self.target_reward.is_finite()) {
            return Err(Error::domain("rewards must be finite, target_reward positive"));
        }
        Ok(())
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height
    }

    pub fn cell_of(&self, state: &EnvState) -> Cell {
        // Positions on the far boundary belong to the last cell.
        let i = (libm::floor(state.x).max(0.0) as usize).min(self.width - 1);
        let j = (libm::floor(state.y).max(0.0) as usize).min(self.height - 1);
        Cell(i, j)
    }

    /// Cell reached by `action` from `cell` without slipping, if on the grid.
    pub fn neighbor(&self, cell: Cell, action: Action) -> Option<Cell> {
        let Cell(i, j) = cell;
        let next = match action {
            Action::Left => Cell(i.checked_sub(1)?, j),
            Action::Right => Cell(i + 1, j),
            Action::Up => Cell(i, j + 1),
            Action::Down => Cell(i, j.checked_sub(1)?),
        };
        self.contains(next).then_some(next)
    }

    /// All realised next cells and their probabilities. The probabilities
    /// sum to exactly one when added in the returned order.
    pub fn transitions(&self, cell: Cell, action: Action) -> Vec<(Cell, f64)> {
        let Some(intended) = self.neighbor(cell, action) else {
            return vec![(cell, 1.0)];
        };
        let others: Vec<Cell> = Action::ALL
            .iter()
            .filter_map(|&a| self.neighbor(cell, a))
            .filter(|&c| c != intended)
            .collect();
        if others.is_empty() || self.slip_prob == 0.0 {
            return vec![(intended, 1.0)];
        }
        let share = self.slip_prob / others.len() as f64;
        let mut out: Vec<(Cell, f64)> = others.into_iter().map(|c| (c, share)).collect();
        let slipped: f64 = out.iter().map(|o| o.1).sum();
        out.push((intended, 1.0 - slipped));
        out
    }

    pub fn penalty_at(&self, cell: Cell) -> f64 {
        self.obstacles.iter().find(|o| o.cell == cell).map_or(0.0, |o| o.penalty)
    }

    /// Reward for a step that ends in `cell`.
    pub fn reward_for(&self, cell: Cell) -> f64 {
        if cell == self.target {
            self.target_reward
        } else {
            self.step_reward - self.penalty_at(cell)
        }
    }

    pub fn reset_state<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        self.sample_in(self.start, rng)
    }

    pub fn step_state<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        action: Action,
        rng: &mut R,
    ) -> Result<(EnvState, f64)> {
        if state.done {
            return Err(Error::usage("step called on a finished episode"));
        }
        let cell = self.cell_of(state);
        let transitions = self.transitions(cell, action);
        let realized = if transitions.len() == 1 {
            transitions[0].0
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = transitions[transitions.len() - 1].0;
            for &(c, p) in &transitions {
                acc += p;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            chosen
        };
        let mut next = if realized == cell {
            *state
        } else {
            self.sample_in(realized, rng)
        };
        next.done = realized == self.target;
        Ok((next, self.reward_for(realized)))
    }

    fn sample_in<R: Rng + ?Sized>(&self, cell: Cell, rng: &mut R) -> EnvState {
        let dx: f64 = rng.random();
        let dy: f64 = rng.random();
        EnvState {
            x: cell.0 as f64 + dx,
            y: cell.1 as f64 + dy,
            done: false,
        }
    }

    /// Normalised `(x / width, y / height)`.
    pub fn features(&self, state: &EnvState) -> [f64; 2] {
        [state.x / self.width as f64, state.y / self.height as f64]
    }
}

impl Environment for GridWorld {
    type State = EnvState;

    fn num_actions(&self) -> usize {
        Action::ALL.len()
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        self.reset_state(rng)
    }

    fn step<R: Rng + ?Sized>(&self, state: &EnvState, action: usize, rng: &mut R) -> Result<(EnvState, f64)> {
        let action = Action::from_index(action)
            .ok_or_else(|| Error::usage(format!("action index {action} out of range")))?;
        self.step_state(state, action, rng)
    }

    /// Uniform over every cell except the target, uniform inside the cell.
    fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let cells = self.width * self.height - 1;
        let mut i = rng.random_range(0..cells);
        if i >= self.target.1 * self.width + self.target.0 {
            i += 1;
        }
        self.sample_in(Cell(i % self.width, i / self.width), rng)
    }

    fn is_terminal(&self, state: &EnvState) -> bool {
        state.done
    }

    fn featurize(&self, state: &EnvState) -> Vec<f64> {
        self.features(state).to_vec()
    }

    fn featurize_into(&self, state: &EnvState, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.features(state));
    }

    fn num_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    fn obstacle_index(&self, state: &EnvState) -> Option<usize> {
        let cell = self.cell_of(state);
        self.obstacles.iter().position(|o| o.cell == cell)
    }
}
