use rayon::prelude::*;

use super::dataset::{build_dataset_with, SubjectData};
use super::fit::{train, TrainHistory};
use super::{TrainConfig, TrainError};
use crate::dsp::EpochTensor;
use crate::nn::init::derive_seed;
use crate::nn::{predict_proba, ModelParams};

/// Held-out QS probabilities for one channel, indexed by epoch. Rejected
/// epochs have no prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPredictions {
    pub channel: String,
    pub p_qs: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub held_out_subject: String,
    pub predictions: Vec<ChannelPredictions>,
    pub params: ModelParams<f32>,
    pub history: TrainHistory,
    /// `(subject, epoch index)` of every training sample.
    pub train_keys: Vec<(String, usize)>,
    /// `(subject, epoch index)` of every inner-validation sample.
    pub val_keys: Vec<(String, usize)>,
}

impl FoldResult {
    /// Training or validation samples that belong to the held-out subject.
    pub fn leakage_violations(&self) -> usize {
        self.train_keys
            .iter()
            .chain(&self.val_keys)
            .filter(|(s, _)| *s == self.held_out_subject)
            .count()
    }
}

/// Predict every valid epoch of every channel of `subject`.
pub fn predict_subject(params: &ModelParams<f32>, subject: &SubjectData) -> Result<Vec<ChannelPredictions>, TrainError> {
    subject
        .channels
        .iter()
        .map(|ch| {
            let valid: Vec<&EpochTensor> = ch.iter().filter(|e| e.valid).collect();
            let mut probs = predict_proba(params, &valid)?.into_iter();
            Ok(ChannelPredictions {
                channel: ch.first().map(|e| e.channel_label.clone()).unwrap_or_default(),
                p_qs: ch.iter().map(|e| if e.valid { probs.next() } else { None }).collect(),
            })
        })
        .collect()
}

/// Leave-one-subject-out cross-validation: one fold per subject, trained
/// on all others with `cfg.loso_patience`. Folds run in parallel; each is
/// seeded from `cfg.seed` and its position.
pub fn loso(subjects: &[SubjectData], cfg: &TrainConfig) -> Result<Vec<FoldResult>, TrainError> {
    if subjects.len() < 2 {
        return Err(TrainError::TooFewSubjects(subjects.len()));
    }
    cfg.validate()?;
    (0..subjects.len())
        .into_par_iter()
        .map(|k| {
            let held = &subjects[k];
            let rest: Vec<SubjectData> = subjects
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, s)| s.clone())
                .collect();
            let ds = build_dataset_with(&rest, cfg.channel_sampling);
            let fold_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, k as u64),
                ..cfg.clone()
            };
            log::info!("fold {}/{}: holding out {}", k + 1, subjects.len(), held.subject_id);
            let out = train(&ds, &fold_cfg, cfg.loso_patience)?;
            let keys = |idx: &[usize]| -> Vec<(String, usize)> {
                idx.iter()
                    .map(|&i| {
                        let s = &ds.samples[i];
                        (ds.subjects[s.subject].clone(), ds.epochs[s.epoch].epoch_index)
                    })
                    .collect()
            };
            Ok(FoldResult {
                held_out_subject: held.subject_id.clone(),
                predictions: predict_subject(&out.params, held)?,
                train_keys: keys(&out.train_idx),
                val_keys: keys(&out.val_idx),
                params: out.params,
                history: out.history,
            })
        })
        .collect()
}
