//! One-minute epochs at 64 Hz and the amplitude/flat-line artifact rule.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Sampling rate of the classifier input.
pub const EPOCH_FS: f64 = 64.0;
/// Epoch length in seconds.
pub const EPOCH_SECONDS: f64 = 60.0;
/// Samples per epoch (60 s at 64 Hz).
pub const EPOCH_LEN: usize = 3840;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactConfig {
    /// Absolute amplitude limit in microvolts.
    pub amp_limit_uv: f64,
    /// Shortest run of identical samples treated as a flat signal, seconds.
    pub flat_run_s: f64,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        Self {
            amp_limit_uv: 250.0,
            flat_run_s: 1.0,
        }
    }
}

impl ArtifactConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.amp_limit_uv > 0.0) {
            return Err(format!("amp_limit_uv must be > 0, got {}", self.amp_limit_uv));
        }
        if !(self.flat_run_s > 0.0) {
            return Err(format!("flat_run_s must be > 0, got {}", self.flat_run_s));
        }
        Ok(())
    }
}

/// A single-channel classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTensor {
    pub channel_label: String,
    pub epoch_index: usize,
    pub samples: Vec<f32>,
    /// False when the artifact rule rejected this epoch.
    pub valid: bool,
}

/// True when `samples` (at `fs`) hold an out-of-range value or a flat run.
pub fn is_artifact(samples: &[f64], fs: f64, cfg: &ArtifactConfig) -> bool {
    if samples.iter().any(|v| v.abs() > cfg.amp_limit_uv) {
        return true;
    }
    let min_run = ((cfg.flat_run_s * fs).ceil() as usize).max(2);
    let mut run = 1;
    for w in samples.windows(2) {
        if w[0] == w[1] {
            run += 1;
            if run >= min_run {
                return true;
            }
        } else {
            run = 1;
        }
    }
    false
}

/// Artifact rule applied to a 64 Hz epoch; true means reject.
pub fn reject_artifacts(epoch: &EpochTensor, cfg: &ArtifactConfig) -> bool {
    let s: Vec<f64> = epoch.samples.iter().map(|&v| v as f64).collect();
    is_artifact(&s, EPOCH_FS, cfg)
}

/// Cut a 64 Hz signal into non-overlapping 3840-sample epochs; the trailing
/// partial epoch is dropped. All epochs start out valid.
pub fn segment_epochs(samples: &[f64], channel_label: &str) -> Vec<EpochTensor> {
    samples
        .chunks_exact(EPOCH_LEN)
        .enumerate()
        .map(|(i, c)| EpochTensor {
            channel_label: channel_label.to_string(),
            epoch_index: i,
            samples: c.iter().map(|&v| v as f32).collect(),
            valid: true,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSidecar {
    pub channel: String,
    pub epoch_index: usize,
    pub fs: f64,
    pub n: usize,
    pub valid: bool,
}

/// Dump an epoch as `<stem>.f32` (raw little-endian) plus `<stem>.json`.
pub fn write_epoch_dump(dir: &Path, stem: &str, epoch: &EpochTensor) -> std::io::Result<()> {
    let bytes: Vec<u8> = epoch.samples.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(format!("{stem}.f32")), bytes)?;
    let side = EpochSidecar {
        channel: epoch.channel_label.clone(),
        epoch_index: epoch.epoch_index,
        fs: EPOCH_FS,
        n: epoch.samples.len(),
        valid: epoch.valid,
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&side).map_err(std::io::Error::other)?,
    )
}

pub fn read_epoch_dump(dir: &Path, stem: &str) -> std::io::Result<EpochTensor> {
    let side: EpochSidecar = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)
        .map_err(std::io::Error::other)?;
    let raw = fs::read(dir.join(format!("{stem}.f32")))?;
    if raw.len() != side.n * 4 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{stem}.f32 has {} bytes, sidecar says {} samples", raw.len(), side.n),
        ));
    }
    Ok(EpochTensor {
        channel_label: side.channel,
        epoch_index: side.epoch_index,
        samples: raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        valid: side.valid,
    })
}
