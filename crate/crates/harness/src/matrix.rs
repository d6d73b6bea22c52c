//! Experiment matrices.
//!
//! A matrix lists named cells. Each cell fixes a privacy level (a noise
//! scale `sigma`, or none), an objective, an evaluation action mode and a
//! list of seeds, and may override any [`TrainConfig`] field on top of the
//! matrix-wide `base` overrides.
//!
//! ```json
//! {
//!   "base": {"horizon": 20000, "batch_size": 8},
//!   "privacy": {"delta": 0.05, "L": 1.0, "c_max": 200.0},
//!   "evaluation": {"episodes": 100, "max_steps": 100},
//!   "cells": [
//!     {"name": "maxq-dp5-cpt", "sigma": 5.0, "cpt": "cpt", "action": "MaxQ", "seeds": [0, 1]},
//!     {"name": "maxq-nodp-ev", "cpt": "expectation", "action": "MaxQ",
//!      "overrides": {"learning_rate": 0.01}}
//!   ]
//! }
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ppcpt_core::privacy::fixed_sigma;
use ppcpt_core::{ActionMode, CptMode, PrivacyConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{HarnessError, Result};

pub const DEFAULT_SEEDS: u64 = 20;

/// Keys a cell controls itself and overrides may not touch.
const RESERVED_KEYS: [&str; 2] = ["seed", "privacy"];

fn default_seeds() -> Vec<u64> {
    (0..DEFAULT_SEEDS).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyDefaults {
    pub delta: f64,
    #[serde(rename = "L")]
    pub lipschitz_l: f64,
    pub c_max: f64,
}

impl Default for PrivacyDefaults {
    fn default() -> Self {
        Self { delta: 0.05, lipschitz_l: 1.0, c_max: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub episodes: usize,
    pub max_steps: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { episodes: 100, max_steps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub name: String,
    /// Noise scale; absent means privacy is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub cpt: CptMode,
    pub action: ActionMode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub overrides: Map<String, Value>,
}

impl CellSpec {
    /// `DP-<sigma>` or `NoDP`.
    pub fn privacy_label(&self) -> String {
        match self.sigma {
            Some(s) => format!("DP-{s}"),
            None => "NoDP".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub base: Map<String, Value>,
    #[serde(default)]
    pub privacy: PrivacyDefaults,
    #[serde(default)]
    pub evaluation: EvalSettings,
    pub cells: Vec<CellSpec>,
}

impl ExperimentMatrix {
    /// Every combination of privacy level, objective and action mode, in
    /// table order: action mode, then decreasing noise, then objective.
    pub fn full(sigmas: &[Option<f64>], base: Map<String, Value>, seeds: Vec<u64>) -> Self {
        let mut cells = Vec::new();
        for action in [ActionMode::MaxQ, ActionMode::RandQ] {
            for &sigma in sigmas {
                for cpt in [CptMode::Cpt, CptMode::Expectation] {
                    let privacy = match sigma {
                        Some(s) => format!("dp{s}"),
                        None => "nodp".to_string(),
                    };
                    let action_name = match action {
                        ActionMode::MaxQ => "maxq",
                        ActionMode::RandQ => "randq",
                    };
                    let objective = match cpt {
                        CptMode::Cpt => "cpt",
                        CptMode::Expectation => "ev",
                    };
                    cells.push(CellSpec {
                        name: format!("{action_name}-{privacy}-{objective}"),
                        sigma,
                        cpt,
                        action,
                        seeds: seeds.clone(),
                        overrides: Map::new(),
                    });
                }
            }
        }
        Self {
            base,
            privacy: PrivacyDefaults::default(),
            evaluation: EvalSettings::default(),
            cells,
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let matrix: Self = serde_json::from_str(text).map_err(|e| HarnessError::parse(path, &e))?;
        matrix.validate().map_err(|m| HarnessError::config(path, m))?;
        Ok(matrix)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Structural checks plus a trial resolution of every cell.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.cells.is_empty() {
            return Err("matrix has no cells".into());
        }
        if self.evaluation.episodes == 0 || self.evaluation.max_steps == 0 {
            return Err("evaluation.episodes and evaluation.max_steps must be positive".into());
        }
        let mut names = BTreeSet::new();
        let mut slots = BTreeSet::new();
        for cell in &self.cells {
            let valid_name = !cell.name.is_empty()
                && cell.name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !valid_name {
                return Err(format!("cell name {:?} must be non-empty ASCII letters, digits, '-', '_' or '.'", cell.name));
            }
            if !names.insert(cell.name.as_str()) {
                return Err(format!("duplicate cell name {:?}", cell.name));
            }
            if cell.seeds.is_empty() {
                return Err(format!("cell {:?} has no seeds", cell.name));
            }
            if cell.seeds.iter().collect::<BTreeSet<_>>().len() != cell.seeds.len() {
                return Err(format!("cell {:?} repeats a seed", cell.name));
            }
            if let Some(s) = cell.sigma {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(format!("cell {:?}: sigma must be positive, got {s}", cell.name));
                }
            }
            let slot = (action_index(cell.action), cell.privacy_label(), cell.cpt == CptMode::Cpt);
            if !slots.insert(slot) {
                return Err(format!(
                    "cell {:?} repeats the action mode, privacy level and objective of an earlier cell",
                    cell.name
                ));
            }
            self.train_config(cell).map_err(|e| format!("cell {:?}: {e}", cell.name))?;
        }
        Ok(())
    }

    /// Training configuration of `cell` with privacy disabled and seed 0.
    /// Fails on unknown or reserved override keys and on values that do not
    /// type-check.
    pub fn train_config(&self, cell: &CellSpec) -> std::result::Result<TrainConfig, String> {
        let mut value = serde_json::to_value(TrainConfig::default()).map_err(|e| e.to_string())?;
        for (scope, overrides) in [("base", &self.base), ("overrides", &cell.overrides)] {
            for key in RESERVED_KEYS {
                if overrides.contains_key(key) {
                    return Err(format!("{scope}.{key} is set by the cell, not by overrides"));
                }
            }
            merge(&mut value, overrides, scope)?;
        }
        let mut cfg: TrainConfig = serde_json::from_value(value).map_err(|e| e.to_string())?;
        cfg.cpt = cfg.cpt.with_mode(cell.cpt);
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Privacy configuration of `cell` under `cfg`: disabled, or the
    /// calibration for the cell's noise scale.
    pub fn privacy_config(&self, cell: &CellSpec, cfg: &TrainConfig) -> ppcpt_core::Result<PrivacyConfig> {
        match cell.sigma {
            None => Ok(PrivacyConfig::disabled()),
            Some(sigma) => fixed_sigma(
                sigma,
                self.privacy.delta,
                self.privacy.lipschitz_l,
                self.privacy.c_max,
                cfg.learning_rate,
                cfg.batch_size,
            ),
        }
    }
}

pub(crate) fn action_index(mode: ActionMode) -> usize {
    match mode {
        ActionMode::MaxQ => 0,
        ActionMode::RandQ => 1,
    }
}

fn merge(target: &mut Value, overrides: &Map<String, Value>, scope: &str) -> std::result::Result<(), String> {
    let Value::Object(fields) = target else {
        return Err(format!("{scope} does not accept nested keys"));
    };
    for (key, value) in overrides {
        let path = format!("{scope}.{key}");
        let Some(slot) = fields.get_mut(key) else {
            return Err(format!("unknown field {path}"));
        };
        match (slot, value) {
            (slot @ Value::Object(_), Value::Object(inner)) => merge(slot, inner, &path)?,
            (slot, value) => *slot = value.clone(),
        }
    }
    Ok(())
}
