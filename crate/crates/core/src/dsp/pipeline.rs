//! The fixed preprocessing chain: artifact scan, band-pass, resample,
//! segment. Each stage consumes the previous stage's type, so the order
//! cannot be changed by a caller.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::butterworth::{design_butter_bandpass, filter_zero_phase};
use super::epoch::{is_artifact, segment_epochs, ArtifactConfig, EpochTensor, EPOCH_FS, EPOCH_SECONDS};
use super::resample::resample;
use super::DspError;
use crate::recording::{ChannelSignal, Recording};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub artifact: ArtifactConfig,
    pub filter_order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            artifact: ArtifactConfig::default(),
            filter_order: 4,
            low_hz: 0.5,
            high_hz: 30.0,
        }
    }
}

/// Raw channel plus the per-minute artifact verdicts.
#[derive(Debug, Clone)]
pub struct ScannedSignal {
    label: String,
    fs: f64,
    samples: Vec<f64>,
    rejected: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FilteredSignal(ScannedSignal);

#[derive(Debug, Clone)]
pub struct ResampledSignal {
    label: String,
    samples: Vec<f64>,
    rejected: Vec<bool>,
}

/// Scan each minute of the raw channel with the artifact rule.
pub fn scan(channel: &ChannelSignal, cfg: &ArtifactConfig) -> ScannedSignal {
    let per_epoch = EPOCH_SECONDS * channel.fs;
    let n = channel.samples.len();
    // Enough windows to cover every epoch the resampled signal can yield.
    let n_windows = ((n as f64 * EPOCH_FS / channel.fs).ceil() as usize) / super::EPOCH_LEN;
    let rejected = (0..n_windows)
        .map(|k| {
            let lo = ((k as f64 * per_epoch).round() as usize).min(n);
            let hi = (((k + 1) as f64 * per_epoch).round() as usize).min(n);
            is_artifact(&channel.samples[lo..hi], channel.fs, cfg)
        })
        .collect();
    ScannedSignal {
        label: channel.label.clone(),
        fs: channel.fs,
        samples: channel.samples.clone(),
        rejected,
    }
}

impl ScannedSignal {
    pub fn rejected(&self) -> &[bool] {
        &self.rejected
    }

    pub fn band_pass(self, order: usize, low_hz: f64, high_hz: f64) -> Result<FilteredSignal, DspError> {
        let spec = design_butter_bandpass(order, low_hz, high_hz, self.fs)?;
        let samples = filter_zero_phase(&self.samples, &spec)?;
        Ok(FilteredSignal(ScannedSignal { samples, ..self }))
    }
}

impl FilteredSignal {
    pub fn resample(self, fs_out: f64) -> Result<ResampledSignal, DspError> {
        let s = self.0;
        Ok(ResampledSignal {
            samples: resample(&s.samples, s.fs, fs_out)?,
            label: s.label,
            rejected: s.rejected,
        })
    }
}

impl ResampledSignal {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Segment into epochs, marking those whose raw minute was rejected.
    pub fn segment(self) -> Vec<EpochTensor> {
        let mut epochs = segment_epochs(&self.samples, &self.label);
        for e in &mut epochs {
            e.valid = !self.rejected.get(e.epoch_index).copied().unwrap_or(true);
        }
        epochs
    }
}

/// Full chain for one channel.
pub fn preprocess_channel(channel: &ChannelSignal, cfg: &PreprocessConfig) -> Result<Vec<EpochTensor>, DspError> {
    Ok(scan(channel, &cfg.artifact)
        .band_pass(cfg.filter_order, cfg.low_hz, cfg.high_hz)?
        .resample(EPOCH_FS)?
        .segment())
}

/// Epochs for every channel of a recording, indexed `[channel][epoch]`.
pub fn preprocess_recording(rec: &Recording, cfg: &PreprocessConfig) -> Result<Vec<Vec<EpochTensor>>, DspError> {
    rec.channels
        .par_iter()
        .map(|c| preprocess_channel(c, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::EPOCH_LEN;

    fn channel(fs: f64, minutes: usize) -> ChannelSignal {
        let n = (fs * 60.0) as usize * minutes;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                30.0 * (2.0 * std::f64::consts::PI * 3.0 * t).sin() + 10.0 * (t * 17.0).sin()
            })
            .collect();
        ChannelSignal::new("F3-P3", fs, samples)
    }

    #[test]
    fn chain_output_shape() {
        let epochs = preprocess_channel(&channel(256.0, 5), &PreprocessConfig::default()).unwrap();
        assert_eq!(epochs.len(), 5);
        assert!(epochs.iter().all(|e| e.valid && e.samples.len() == EPOCH_LEN));
        assert_eq!(epochs[3].epoch_index, 3);
        assert_eq!(epochs[0].channel_label, "F3-P3");
    }

    #[test]
    fn equals_stagewise_composition() {
        let ch = channel(256.0, 3);
        let cfg = PreprocessConfig::default();
        let manual = scan(&ch, &cfg.artifact)
            .band_pass(4, 0.5, 30.0)
            .unwrap()
            .resample(64.0)
            .unwrap()
            .segment();
        assert_eq!(preprocess_channel(&ch, &cfg).unwrap(), manual);
    }

    #[test]
    fn rejection_uses_raw_minutes() {
        let mut ch = channel(256.0, 4);
        ch.samples[256 * 60 * 2 + 100] = 400.0; // minute 2
        for v in &mut ch.samples[256 * 60 * 3 + 10..256 * 60 * 3 + 10 + 300] {
            *v = 0.0; // flat run in minute 3
        }
        let epochs = preprocess_channel(&ch, &PreprocessConfig::default()).unwrap();
        let valid: Vec<bool> = epochs.iter().map(|e| e.valid).collect();
        assert_eq!(valid, vec![true, true, false, false]);
    }

    #[test]
    fn works_from_other_rates() {
        let epochs = preprocess_channel(&channel(200.0, 2), &PreprocessConfig::default()).unwrap();
        assert_eq!(epochs.len(), 2);
        assert!(epochs.iter().all(|e| e.valid));
    }

    #[test]
    fn recording_channels_in_order() {
        let mut b = channel(256.0, 2);
        b.label = "P3-P4".into();
        let rec = Recording::new("s", 120.0, vec![channel(256.0, 2), b]).unwrap();
        let out = preprocess_recording(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1][0].channel_label, "P3-P4");
    }
}
