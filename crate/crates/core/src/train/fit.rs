use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::dataset::{inner_split, LabeledDataset};
use super::schedule::PlateauSchedule;
use super::{TrainConfig, TrainError, BN_MOMENTUM};
use crate::dsp::EpochTensor;
use crate::nn::init::derive_seed;
use crate::nn::{backward, build_model, forward_batch, Batch, Mode, ModelParams};

const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_epoch: usize,
    /// Epochs after which the learning rate was reduced.
    pub lr_changes: Vec<usize>,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: ModelParams<f32>,
    pub history: TrainHistory,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

fn stack(ds: &LabeledDataset, idx: &[usize]) -> Result<(Batch<f32>, Vec<usize>), TrainError> {
    let refs: Vec<&EpochTensor> = idx.iter().map(|&i| &ds.epochs[ds.samples[i].epoch]).collect();
    let targets = idx.iter().map(|&i| ds.samples[i].class()).collect();
    Ok((Batch::from_epochs(&refs)?, targets))
}

/// Mean inference-mode cross-entropy over `idx`.
fn eval_loss(params: &ModelParams<f32>, ds: &LabeledDataset, idx: &[usize]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, t) = stack(ds, chunk)?;
        total += forward_batch(params, &x, Mode::Infer)?.loss(&t) * chunk.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Train on `ds`, holding out `cfg.inner_val_fraction` of the
/// `(subject, epoch)` groups for validation. Training stops after
/// `patience` epochs without a strict validation improvement, or at
/// `cfg.max_epochs`. If the split leaves no validation samples (very small
/// datasets), the training loss is monitored instead.
pub fn train(ds: &LabeledDataset, cfg: &TrainConfig, patience: usize) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let (as_count, qs_count) = ds.class_counts();
    if as_count == 0 || qs_count == 0 {
        return Err(TrainError::SingleClassDataset { as_count, qs_count });
    }
    let (train_idx, val_idx) = inner_split(ds, cfg.inner_val_fraction, derive_seed(cfg.seed, 0x5711));
    let adam = cfg.adam();
    let mut params: ModelParams<f32> = build_model(&cfg.model, cfg.seed)?;
    let mut state = AdamState::new(params.values.len());
    let mut sched = PlateauSchedule::new(cfg.lr, patience, cfg.lr_plateau, cfg.lr_factor);
    let mut best = params.clone();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_epoch: 0,
        lr_changes: Vec::new(),
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };
    let mut order = train_idx.clone();
    for epoch in 0..cfg.max_epochs {
        let lr = sched.lr;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, targets) = stack(ds, chunk)?;
            let dropout_seed = derive_seed(cfg.seed ^ ((epoch as u64) << 32), b as u64);
            let trace = forward_batch(&params, &x, Mode::Train { dropout_seed })?;
            let grads = backward(&params, &trace, &targets)?;
            adam_step(&mut params.values, &grads.values, &mut state, &adam, lr);
            params.update_running(&trace, BN_MOMENTUM);
            total += grads.loss * chunk.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = if val_idx.is_empty() {
            train_loss
        } else {
            eval_loss(&params, ds, &val_idx)?
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let obs = sched.observe(epoch, val_loss);
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {lr:e}");
        if obs.improved {
            best = params.clone();
            history.best_epoch = epoch;
            history.best_val_loss = val_loss;
        }
        if obs.lr_changed {
            history.lr_changes.push(epoch);
        }
        history.stop_epoch = epoch;
        if obs.stop {
            break;
        }
    }
    Ok(TrainOutput {
        params: best,
        history,
        train_idx,
        val_idx,
    })
}

/// `epoch,train_loss,val_loss,lr`, one row per training epoch.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &history.epochs {
        w.serialize(r)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, ModelSpec};
    use crate::recording::SleepLabel;
    use crate::train::Sample;

    fn tiny_spec(len: usize) -> ModelSpec {
        ModelSpec {
            input_channels: 1,
            input_len: len,
            layers: vec![
                LayerSpec::Conv1d {
                    in_channels: 1,
                    out_channels: 4,
                    kernel_size: 3,
                },
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inputs: 4, outputs: 2 },
                LayerSpec::Softmax,
            ],
        }
    }

    /// QS epochs carry a large slow oscillation, AS epochs a small fast one.
    fn toy_dataset(n: usize, len: usize) -> LabeledDataset {
        let mut ds = LabeledDataset {
            subjects: vec!["toy".into()],
            experts: vec!["E1".into()],
            ..Default::default()
        };
        for i in 0..n {
            let qs = i % 2 == 0;
            let (amp, f) = if qs { (60.0, 0.02) } else { (10.0, 0.2) };
            let phase = i as f64 * 0.7;
            ds.epochs.push(EpochTensor {
                channel_label: "F3-P3".into(),
                epoch_index: i,
                samples: (0..len)
                    .map(|t| (amp * (2.0 * std::f64::consts::PI * f * t as f64 + phase).sin()) as f32)
                    .collect(),
                valid: true,
            });
            ds.epoch_subject.push(0);
            ds.samples.push(Sample {
                epoch: i,
                label: if qs { SleepLabel::Qs } else { SleepLabel::As },
                subject: 0,
                expert: 0,
            });
        }
        ds
    }

    fn tiny_cfg(len: usize) -> TrainConfig {
        TrainConfig {
            model: tiny_spec(len),
            batch_size: 8,
            max_epochs: 60,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn single_class_rejected() {
        let mut ds = toy_dataset(10, 64);
        ds.samples.retain(|s| s.label == SleepLabel::Qs);
        assert!(matches!(
            train(&ds, &tiny_cfg(64), 5),
            Err(TrainError::SingleClassDataset { as_count: 0, qs_count: 5 })
        ));
    }

    #[test]
    fn best_checkpoint_never_worse_than_earlier() {
        let ds = toy_dataset(60, 64);
        let out = train(&ds, &tiny_cfg(64), 10).unwrap();
        let h = &out.history;
        let best = h.epochs[h.best_epoch].val_loss;
        assert_eq!(best, h.best_val_loss);
        assert!(h.epochs[..=h.best_epoch].iter().all(|r| r.val_loss >= best));
        // The returned parameters reproduce the recorded best loss.
        let again = eval_loss(&out.params, &ds, &out.val_idx).unwrap();
        assert!((again - best).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy_dataset(30, 64);
        let mut cfg = tiny_cfg(64);
        cfg.max_epochs = 5;
        let a = train(&ds, &cfg, 5).unwrap();
        let b = train(&ds, &cfg, 5).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn history_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 0,
                train_loss: 0.5,
                val_loss: 0.6,
                lr: 0.001,
            }],
            best_epoch: 0,
            best_val_loss: 0.6,
            stop_epoch: 0,
            lr_changes: vec![],
            n_train: 1,
            n_val: 1,
        };
        let p = dir.path().join("h.csv");
        write_history_csv(&p, &h).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss,lr\n0,0.5,0.6,0.001\n");
    }
}
