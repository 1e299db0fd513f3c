//! Preprocessing: band-pass filtering, resampling to 64 Hz, artifact
//! rejection and segmentation into one-minute epochs.

pub mod butterworth;
pub mod epoch;
pub mod pipeline;
pub mod resample;

pub use butterworth::{design_butter_bandpass, filter_causal, filter_zero_phase, Biquad, FilterKind, FilterSpec};
pub use epoch::{
    is_artifact, read_epoch_dump, reject_artifacts, segment_epochs, write_epoch_dump, ArtifactConfig, EpochTensor,
    EPOCH_FS, EPOCH_LEN, EPOCH_SECONDS,
};
pub use pipeline::{preprocess_channel, preprocess_recording, scan, PreprocessConfig};
pub use resample::{rational_ratio, resample};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("high cutoff {high_hz} Hz is not below Nyquist for fs = {fs} Hz")]
    NyquistViolation { high_hz: f64, fs: f64 },
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("signal of {len} samples is too short; need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid resampling rates {fs_in} -> {fs_out} Hz")]
    InvalidRate { fs_in: f64, fs_out: f64 },
}
