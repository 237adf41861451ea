//! Desk-scale experiments behind the command-line tool.

mod boundary;
mod convert;
mod profile;
mod rrc_cmd;
mod trial;

pub use boundary::{boundary_csv, boundary_experiment, eps_grid, BoundaryRow};
pub use convert::{convert_records, BoxForm};
pub use profile::{profile_command, profile_csv, DEFAULT_PROFILE_SIZES, PROFILE_HEADER};
pub use rrc_cmd::{
    noise_field, roundtrip_error, run_rrc_probe, smooth_field, ProbeOutcome, RrcProbe, NOISE_ROUNDTRIP_BOUND,
    SMOOTH_ROUNDTRIP_BOUND,
};
pub use trial::{
    run_trial, run_trials, sample_pair, Geometry, TrialLoss, TrialRecord, TrialRepr, BOUNDARY_OFFSET,
};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Shared knobs for trials and sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub max_steps: usize,
    pub lr: f64,
    pub iou_threshold: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub eps_steps: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            max_steps: 500,
            lr: 0.05,
            iou_threshold: 0.95,
            eps_min: 1e-3,
            eps_max: 5e-2,
            eps_steps: 5,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

fn get_f64(v: &Value, field: &str, default: f64) -> Result<f64> {
    match v.get(field) {
        None => Ok(default),
        Some(x) => x
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| Error::config(field, format!("expected a finite number, got {x}"))),
    }
}

fn get_usize(v: &Value, field: &str, default: usize) -> Result<usize> {
    match v.get(field) {
        None => Ok(default),
        Some(x) => x
            .as_u64()
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::config(field, format!("expected a non-negative integer, got {x}"))),
    }
}

impl ExperimentConfig {
    /// Reads any subset of the fields from a JSON object; missing fields keep
    /// their defaults. `gamma1`/`gamma2` set the loss weights.
    pub fn from_json(v: &Value) -> Result<Self> {
        if !v.is_object() {
            return Err(Error::config("config", "expected a JSON object"));
        }
        let d = Self::default();
        let cfg = Self {
            trials: get_usize(v, "trials", d.trials)?,
            max_steps: get_usize(v, "max_steps", d.max_steps)?,
            lr: get_f64(v, "lr", d.lr)?,
            iou_threshold: get_f64(v, "iou_threshold", d.iou_threshold)?,
            eps_min: get_f64(v, "eps_min", d.eps_min)?,
            eps_max: get_f64(v, "eps_max", d.eps_max)?,
            eps_steps: get_usize(v, "eps_steps", d.eps_steps)?,
            seed: match v.get("seed") {
                None => d.seed,
                Some(s) => s
                    .as_u64()
                    .ok_or_else(|| Error::config("seed", format!("expected a non-negative integer, got {s}")))?,
            },
            weights: LossWeights {
                gamma1: get_f64(v, "gamma1", d.weights.gamma1)?,
                gamma2: get_f64(v, "gamma2", d.weights.gamma2)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::config("iou_threshold", "must lie in (0, 1)"));
        }
        if !(self.eps_min > 0.0) {
            return Err(Error::config("eps_min", "must be positive"));
        }
        if !(self.eps_max >= self.eps_min && self.eps_max < std::f64::consts::FRAC_PI_4) {
            return Err(Error::config("eps_max", "must lie in [eps_min, π/4)"));
        }
        if self.eps_steps == 0 {
            return Err(Error::config("eps_steps", "must be positive"));
        }
        if !(self.weights.gamma1 > 0.0) {
            return Err(Error::config("gamma1", "must be positive"));
        }
        if !(self.weights.gamma2 >= 0.0) {
            return Err(Error::config("gamma2", "must be non-negative"));
        }
        Ok(())
    }
}
