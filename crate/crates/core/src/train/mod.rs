//! Adam training with early stopping and a plateau learning-rate schedule,
//! dual-expert datasets and leave-one-subject-out cross-validation.

mod adam;
mod dataset;
mod fit;
mod loso;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{ModelSpec, NnError};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dataset::{build_dataset, build_dataset_with, inner_split, ChannelSampling, LabeledDataset, Sample, SubjectData};
pub use fit::{train, write_history_csv, EpochRecord, TrainHistory, TrainOutput};
pub use loso::{loso, predict_subject, ChannelPredictions, FoldResult};
pub use schedule::{Observation, PlateauSchedule};

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data holds a single class ({as_count} AS, {qs_count} QS)")]
    SingleClassDataset { as_count: usize, qs_count: usize },
    #[error("cross-validation needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement
    /// (standalone training).
    pub early_stop_patience: usize,
    /// Patience used inside cross-validation folds.
    pub loso_patience: usize,
    pub lr_factor: f64,
    pub lr_plateau: usize,
    pub inner_val_fraction: f64,
    pub seed: u64,
    /// Channels used for training inside cross-validation folds.
    pub channel_sampling: ChannelSampling,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            batch_size: 64,
            max_epochs: 500,
            early_stop_patience: 35,
            loso_patience: 20,
            lr_factor: 0.1,
            lr_plateau: 20,
            inner_val_fraction: 0.1,
            seed: 0,
            channel_sampling: ChannelSampling::All,
            model: ModelSpec::reference(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if !(self.inner_val_fraction > 0.0 && self.inner_val_fraction < 1.0) {
            return bad(format!("inner_val_fraction must be in (0, 1), got {}", self.inner_val_fraction));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!("lr_factor must be in (0, 1], got {}", self.lr_factor));
        }
        self.model.plan()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_values_rejected() {
        let cases = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { beta2: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { inner_val_fraction: 1.0, ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.batch_size, 64);
    }
}
