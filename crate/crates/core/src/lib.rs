//! Prospect-theoretic reinforcement learning with Gaussian-process privacy
//! noise.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file formats, logging and the command line live in the
//! `ppcpt-harness` crate.
//!
//! * [`cpt`]: cumulative-prospect-theory values and the order-statistic
//!   estimator.
//! * [`privacy`]: chain-correlated GP noise, calibration of its scale from a
//!   target `(epsilon, delta)`, and the tail/RKHS bounds behind it.
//! * [`grid`]: the continuous-state gridworld with slip dynamics.
//! * [`tabular`]: finite MDPs and the exact CPT Q-iteration operator, used as
//!   an oracle.
//! * [`network`]: a small MLP value function with hand-written backprop.
//! * [`trainer`]: the privacy-preserving CPT Q-learning loop and policy
//!   evaluation.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cpt;
pub mod env;
pub mod error;
pub mod grid;
pub mod network;
pub mod privacy;
pub mod tabular;
pub mod trainer;

pub use cpt::{CptMode, CptSpec, DiscreteDistribution};
pub use env::Environment;
pub use error::{Error, Result};
pub use grid::{Action, Cell, EnvState, GridWorld, Obstacle};
pub use network::{Activation, Gradient, Layer, QNetwork};
pub use privacy::{CalibrationReport, ChainResolution, NoiseChain, PrivacyConfig};
pub use tabular::TabularMdp;
pub use trainer::{
    ActionMode, BatchRecord, BootstrapPolicy, EvalReport, TrainConfig, TrainOutput, VisitedChain,
};
