use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Variant;

/// How the bilinear edge forms start out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeInit {
    /// `edge_init_scale · I`: edge scores start as scaled feature similarity.
    #[default]
    Identity,
    /// Gaussian entries with standard deviation `edge_init_scale / d′`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub lambda_acyc: f64,
    pub lambda_l1: f64,
    pub temp_start: f64,
    pub temp_end: f64,
    pub seed: u64,
    pub epsilon: f64,

    pub text_dim: usize,
    pub proj_dim: usize,
    pub pool_hidden: usize,
    pub embed_dim: usize,
    pub edge_init: EdgeInit,
    pub edge_init_scale: f64,
    pub variant: Variant,
    /// Fractions of patients in the train and validation splits; the rest
    /// is the test split.
    pub train_fraction: f64,
    pub valid_fraction: f64,
    /// Cutoff of the early-stopping metric (validation Recall@K).
    pub early_stopping_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 16,
            dropout: 0.1,
            max_epochs: 50,
            patience: 5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            lambda_acyc: 0.1,
            lambda_l1: 0.01,
            temp_start: 1.0,
            temp_end: 0.1,
            seed: 0,
            epsilon: 0.1,
            text_dim: crate::encoding::DEFAULT_TEXT_DIM,
            proj_dim: 128,
            pool_hidden: 128,
            embed_dim: 64,
            edge_init: EdgeInit::Identity,
            edge_init_scale: 20.0,
            variant: Variant::Full,
            train_fraction: 0.7,
            valid_fraction: 0.1,
            early_stopping_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let positive = [
            ("lr", self.lr),
            ("temp_end", self.temp_end),
            ("focal_alpha", self.focal_alpha),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        let nonneg = [
            ("weight_decay", self.weight_decay),
            ("focal_gamma", self.focal_gamma),
            ("lambda_acyc", self.lambda_acyc),
            ("lambda_l1", self.lambda_l1),
            ("edge_init_scale", self.edge_init_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.focal_alpha >= 1.0 {
            return fail(format!("focal_alpha must be below 1, got {}", self.focal_alpha));
        }
        if !(self.temp_start >= self.temp_end && self.temp_start.is_finite()) {
            return fail(format!(
                "temp_start ({}) must be at least temp_end ({})",
                self.temp_start, self.temp_end
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.early_stopping_k == 0 {
            return fail("max_epochs, batch_size and early_stopping_k must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return fail(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if [self.text_dim, self.proj_dim, self.pool_hidden, self.embed_dim].contains(&0) {
            return fail("model dimensions must be positive".into());
        }
        let (tf, vf) = (self.train_fraction, self.valid_fraction);
        if !(tf > 0.0 && vf >= 0.0 && tf + vf <= 1.0) {
            return fail(format!("invalid split fractions {tf} / {vf}"));
        }
        Ok(())
    }
}

/// Geometric schedule from `temp_start` at epoch 0 to `temp_end` at the last
/// epoch; constant when there is a single epoch.
pub fn anneal_temperature(epoch: usize, config: &TrainConfig) -> f64 {
    if config.max_epochs <= 1 {
        return config.temp_start;
    }
    let frac = epoch.min(config.max_epochs - 1) as f64 / (config.max_epochs - 1) as f64;
    config.temp_start * (config.temp_end / config.temp_start).powf(frac)
}
