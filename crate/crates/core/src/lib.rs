//! Single-channel neonatal sleep-state classification and the Sleep State
//! Trend (SST).
//!
//! ```text
//! EDF ──► bipolar derivation ──► artifact scan ──► 0.5–30 Hz band-pass
//!     ──► 64 Hz resample ──► 1-min epochs ──► 1D CNN (per channel)
//!     ──► channel fusion ──► 5-epoch median ──► SST / DQS / SVG
//! ```
//!
//! Modules map onto those stages: [`recording`], [`dsp`], [`nn`], [`train`],
//! [`sst`], [`metrics`], [`envelope`] (amplitude-envelope comparator) and
//! [`synth`] (synthetic EEG with ground truth).

pub mod dsp;
pub mod envelope;
pub mod metrics;
pub mod nn;
pub mod recording;
pub mod sst;
pub mod synth;
pub mod train;

pub use dsp::DspError;
pub use nn::NnError;
pub use recording::RecordingError;
