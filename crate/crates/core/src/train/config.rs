use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Coefficient of the `λΣθ²` penalty; 0 disables it.
    pub lambda_l2: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the auxiliary-head loss when the model has one.
    pub aux_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 50,
            seed: 42,
            lambda_l2: 1e-4,
            early_stop_patience: 10,
            early_stop_min_delta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            aux_loss_weight: 0.4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) {
            return Err(Error::config("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be ≥ 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("early_stop_patience", "must be ≥ 1"));
        }
        if !(self.lambda_l2.is_finite() && self.lambda_l2 >= 0.0) {
            return Err(Error::config("lambda_l2", format!("must be ≥ 0, got {}", self.lambda_l2)));
        }
        if !(self.early_stop_min_delta.is_finite() && self.early_stop_min_delta >= 0.0) {
            return Err(Error::config("early_stop_min_delta", "must be ≥ 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !positive(self.eps) {
            return Err(Error::config("eps", "must be > 0"));
        }
        if !(self.aux_loss_weight.is_finite() && self.aux_loss_weight >= 0.0) {
            return Err(Error::config("aux_loss_weight", "must be ≥ 0"));
        }
        Ok(())
    }
}
