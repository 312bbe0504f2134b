//! Engine configuration and its defaults.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Failure cases serialized into an expansion message are capped at this
/// count (the gates still evaluate the full failure set).
pub const FAILURE_SAMPLE_CAP: usize = 8;

/// All knobs of the optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Failure-gate threshold: a candidate must improve accuracy on the
    /// failure set by strictly more than this.
    pub h_f: f64,
    /// Validation-gate threshold: a candidate must improve validation
    /// accuracy by strictly more than this.
    pub h_v: f64,
    /// Mixing coefficient between validation and failure-set accuracy in the
    /// reward.
    pub alpha: f64,
    /// Learning rate of the exponential weight update.
    pub eta: f64,
    /// Maximum number of accepted optimization steps.
    pub max_steps: u32,
    /// The run converges once this many gate failures have accumulated.
    pub failure_limit: u32,
    /// Number of exemplars serialized into the meta-instruction.
    pub exemplar_count: usize,
    /// Sampling temperature for prediction calls.
    pub predict_temperature: f64,
    /// Sampling temperature for prompt-writing calls.
    pub generate_temperature: f64,
    /// How many of the four initial-prompt components the meta-instruction
    /// requests (1..=4).
    pub schema_level: u8,
    /// Seed for every random choice the engine makes.
    pub rng_seed: u64,
    /// Maximum number of prediction calls in flight during evaluation.
    pub eval_concurrency: usize,
    /// How many times a blacklisted or malformed revision is regenerated
    /// before the sentence is resampled.
    pub max_blacklist_retries: u32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            h_f: 0.3,
            h_v: 0.1,
            alpha: 0.4,
            eta: 0.055,
            max_steps: 4,
            failure_limit: 5,
            exemplar_count: 8,
            predict_temperature: 0.0,
            generate_temperature: 0.5,
            schema_level: 4,
            rng_seed: 0,
            eval_concurrency: 4,
            max_blacklist_retries: 3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EngineError::Validation(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(EngineError::Validation(format!(
                "eta must be a positive finite real, got {}",
                self.eta
            )));
        }
        if self.failure_limit < 1 {
            return Err(EngineError::Validation("failure_limit must be >= 1".into()));
        }
        if self.exemplar_count < 1 {
            return Err(EngineError::Validation("exemplar_count must be >= 1".into()));
        }
        if !(1..=4).contains(&self.schema_level) {
            return Err(EngineError::Validation(format!(
                "schema_level must be in 1..=4, got {}",
                self.schema_level
            )));
        }
        if self.eval_concurrency < 1 {
            return Err(EngineError::Validation("eval_concurrency must be >= 1".into()));
        }
        if self.max_blacklist_retries < 1 {
            return Err(EngineError::Validation(
                "max_blacklist_retries must be >= 1".into(),
            ));
        }
        if !self.h_f.is_finite() || !self.h_v.is_finite() {
            return Err(EngineError::Validation("gate thresholds must be finite".into()));
        }
        if self.predict_temperature < 0.0 || self.generate_temperature < 0.0 {
            return Err(EngineError::Validation("temperatures must be >= 0".into()));
        }
        Ok(())
    }
}
