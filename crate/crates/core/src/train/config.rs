use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{BaseDistribution, FlowMode, ModelConfig, TransformKind};

fn default_max_gradient_value() -> f64 {
    5.0
}
fn default_hidden_features() -> usize {
    64
}
fn default_resnet_layers() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_validation_fraction() -> f64 {
    0.1
}
fn default_test_fraction() -> f64 {
    0.1
}
fn default_eval_interval() -> usize {
    250
}

/// Training and architecture hyperparameters, read from JSON.
///
/// The six size and optimizer keys without defaults are required; every other
/// key may be omitted. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub number_of_learning_iterations: usize,
    pub transformation_layers: usize,
    pub tail_bound: f64,
    pub number_of_bins: usize,
    #[serde(default = "default_resnet_layers")]
    pub resnet_layers: usize,
    #[serde(default = "default_hidden_features")]
    pub resnet_hidden_features: usize,
    #[serde(default = "default_max_gradient_value")]
    pub maximum_gradient_value: f64,
    #[serde(default)]
    pub dropout_probability: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: FlowMode,
    #[serde(default)]
    pub transform: TransformKind,
    #[serde(default)]
    pub base_distribution: BaseDistribution,
    #[serde(default)]
    pub shared_lambda: bool,
    #[serde(default = "default_true")]
    pub first_split_spline: bool,
    #[serde(default = "default_true")]
    pub lu_mixing: bool,
    #[serde(default = "default_true")]
    pub cosine_annealing: bool,
    /// Fraction of the training split held out for model selection.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Fraction of a dataset held out for testing when no split is given.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
}

impl TrainConfig {
    /// Baseline configuration; callers override what they need.
    pub fn new(learning_rate: f64, batch_size: usize, iterations: usize, layers: usize, bins: usize, tail_bound: f64) -> Self {
        TrainConfig {
            learning_rate,
            batch_size,
            number_of_learning_iterations: iterations,
            transformation_layers: layers,
            tail_bound,
            number_of_bins: bins,
            resnet_layers: default_resnet_layers(),
            resnet_hidden_features: default_hidden_features(),
            maximum_gradient_value: default_max_gradient_value(),
            dropout_probability: 0.0,
            seed: 0,
            mode: FlowMode::Coupling,
            transform: TransformKind::Lrs,
            base_distribution: BaseDistribution::Normal,
            shared_lambda: false,
            first_split_spline: true,
            lu_mixing: true,
            cosine_annealing: true,
            validation_fraction: default_validation_fraction(),
            test_fraction: default_test_fraction(),
            eval_interval: default_eval_interval(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.transformation_layers == 0 {
            return bad("transformation_layers must be positive".into());
        }
        if !(self.maximum_gradient_value > 0.0) {
            return bad(format!("maximum_gradient_value must be positive, got {}", self.maximum_gradient_value));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must be in [0, 0.5], got {}", self.validation_fraction));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must be in [0, 1), got {}", self.test_fraction));
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive".into());
        }
        // Dimension-dependent checks happen once the data is known.
        self.model_config(2).validate()
    }

    /// Architecture for data of dimension `dim`.
    pub fn model_config(&self, dim: usize) -> ModelConfig {
        ModelConfig {
            dim,
            mode: self.mode,
            transform: self.transform,
            base: self.base_distribution,
            layers: self.transformation_layers,
            num_bins: self.number_of_bins,
            tail_bound: self.tail_bound,
            hidden_features: self.resnet_hidden_features,
            num_blocks: self.resnet_layers,
            dropout: self.dropout_probability,
            lu_mixing: self.lu_mixing,
            first_split_spline: self.first_split_spline,
            shared_lambda: self.shared_lambda,
        }
    }
}
