//! World files.
//!
//! ```json
//! {"width": 10, "height": 10, "start": [0, 0], "target": [9, 9],
//!  "obstacles": [{"cell": [1, 1], "penalty": 50}],
//!  "slip_prob": 0.1, "step_reward": -1, "target_reward": 100, "gamma": 0.9}
//! ```

use std::fs;
use std::path::Path;

use ppcpt_core::GridWorld;

use crate::error::{HarnessError, Result};

pub fn parse_world(text: &str, path: &Path) -> Result<GridWorld> {
    let world: GridWorld = serde_json::from_str(text).map_err(|e| HarnessError::parse(path, &e))?;
    world.validate().map_err(|e| HarnessError::config(path, e.to_string()))?;
    Ok(world)
}

pub fn load_world(path: &Path) -> Result<GridWorld> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_world(&text, path)
}
