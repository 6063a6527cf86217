use serde::{Deserialize, Serialize};

use crate::attention::QueryMode;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_features: usize,
    pub num_classes: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub bilstm_units_per_direction: usize,
    pub attention_width: usize,
    pub attention_mode: QueryMode,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_features: 57,
            num_classes: 5,
            conv_filters: 64,
            kernel_size: 3,
            pool_size: 2,
            bilstm_units_per_direction: 32,
            attention_width: 64,
            attention_mode: QueryMode::Final,
            dense_units: 250,
            dropout_rate: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small enough for an exhaustive finite-difference check.
    pub fn tiny(mode: QueryMode) -> Self {
        ModelConfig {
            input_features: 6,
            num_classes: 3,
            conv_filters: 2,
            kernel_size: 3,
            pool_size: 2,
            bilstm_units_per_direction: 2,
            attention_width: 4,
            attention_mode: mode,
            dense_units: 4,
            dropout_rate: 0.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_features", self.input_features),
            ("num_classes", self.num_classes),
            ("conv_filters", self.conv_filters),
            ("kernel_size", self.kernel_size),
            ("pool_size", self.pool_size),
            ("bilstm_units_per_direction", self.bilstm_units_per_direction),
            ("attention_width", self.attention_width),
            ("dense_units", self.dense_units),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::param(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::param(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.input_features < self.kernel_size {
            return Err(Error::param(format!(
                "input_features {} shorter than kernel_size {}",
                self.input_features, self.kernel_size
            )));
        }
        if self.conv_len() < self.pool_size {
            return Err(Error::param(format!(
                "conv output of {} steps cannot be pooled by {}",
                self.conv_len(),
                self.pool_size
            )));
        }
        Ok(())
    }

    pub fn conv_len(&self) -> usize {
        self.input_features - self.kernel_size + 1
    }

    pub fn pooled_len(&self) -> usize {
        self.conv_len() / self.pool_size
    }

    pub fn bilstm_width(&self) -> usize {
        2 * self.bilstm_units_per_direction
    }

    pub fn query_count(&self) -> usize {
        self.attention_mode.query_count(self.pooled_len())
    }

    /// Width of `[flatten(conv output), flatten(second BiLSTM output)]`.
    pub fn combined_width(&self) -> usize {
        self.conv_len() * self.conv_filters + self.query_count() * self.bilstm_width()
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::param(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}
