//! Run configuration shared by every workflow. Every section is optional and
//! falls back to its defaults; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::AssemblyParams;
use crate::cmcv::Thresholds;
use crate::ddas::{KMeansParams, WeightParams};
use crate::mgam::MgamParams;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config key {key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdasConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub alpha: f64,
    pub beta_easy: f64,
    pub beta_medium: f64,
    pub beta_hard: f64,
    pub gamma: f64,
    pub diversity_bonus: f64,
}

impl Default for DdasConfig {
    fn default() -> Self {
        let (km, w) = (KMeansParams::default(), WeightParams::default());
        Self {
            k: km.k,
            seed: km.seed,
            max_iter: km.max_iter,
            tol: km.tol,
            alpha: w.alpha,
            beta_easy: w.beta_easy,
            beta_medium: w.beta_medium,
            beta_hard: w.beta_hard,
            gamma: w.gamma,
            diversity_bonus: w.diversity_bonus,
        }
    }
}

impl DdasConfig {
    pub fn kmeans(&self) -> KMeansParams {
        KMeansParams { k: self.k, seed: self.seed, max_iter: self.max_iter, tol: self.tol }
    }

    pub fn weights(&self) -> WeightParams {
        WeightParams {
            alpha: self.alpha,
            beta_easy: self.beta_easy,
            beta_medium: self.beta_medium,
            beta_hard: self.beta_hard,
            gamma: self.gamma,
            diversity_bonus: self.diversity_bonus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub model_name: String,
    pub jobs: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { model_name: "model".into(), jobs: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cmcv: Thresholds,
    pub ddas: DdasConfig,
    pub mgam: MgamParams,
    pub report: ReportConfig,
    pub assembly: AssemblyParams,
}

/// Largest gap count that may be enumerated exactly (2^20 partitions).
pub const MAX_EXACT_GAPS: usize = 20;

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cmcv.validate().map_err(|e| invalid("cmcv", e.to_string()))?;
        self.ddas.weights().validate().map_err(|e| invalid("ddas", e.to_string()))?;
        if self.ddas.k == 0 {
            return Err(invalid("ddas.k", "must be at least 1"));
        }
        if self.ddas.max_iter == 0 {
            return Err(invalid("ddas.max_iter", "must be at least 1"));
        }
        if !(self.ddas.tol >= 0.0 && self.ddas.tol.is_finite()) {
            return Err(invalid("ddas.tol", "must be a non-negative number"));
        }
        if self.mgam.exact_gap_limit > MAX_EXACT_GAPS {
            return Err(invalid("mgam.exact_gap_limit", format!("must be at most {MAX_EXACT_GAPS}")));
        }
        if self.mgam.beam_width == 0 {
            return Err(invalid("mgam.beam_width", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mgam.optional_min_sim) {
            return Err(invalid("mgam.optional_min_sim", "must lie in [0, 1]"));
        }
        if self.report.jobs == 0 {
            return Err(invalid("report.jobs", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.assembly.header_similarity) {
            return Err(invalid("assembly.header_similarity", "must lie in [0, 1]"));
        }
        Ok(())
    }
}
