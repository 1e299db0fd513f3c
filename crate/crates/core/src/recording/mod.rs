//! EEG recordings, expert annotations and per-epoch labels.
//!
//! Recordings come from EDF files (see [`edf`]); quiet-sleep annotations come
//! from a sidecar CSV (see [`annotations`]). Everything not annotated as QS is
//! active sleep.

pub mod annotations;
pub mod edf;

pub use annotations::{
    epoch_labels, read_annotations, write_annotations, AnnotationTrack, EpochLabel, Interval,
    SleepLabel,
};
pub use edf::{parse_edf, read_edf, write_edf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("inconsistent record length: header implies {expected} data bytes, file has {actual}")]
    InconsistentRecordLength { expected: usize, actual: usize },
    #[error("unsupported (non-numeric) signal: {0}")]
    UnsupportedTransducer(String),
    #[error("channel not found: {0}")]
    MissingChannel(String),
    #[error("channels {a} and {b} have different sampling rates ({fs_a} vs {fs_b} Hz)")]
    SampleRateMismatch {
        a: String,
        b: String,
        fs_a: f64,
        fs_b: f64,
    },
    #[error("cannot write EDF: {0}")]
    Unwritable(String),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("annotation line {line}: negative duration {duration_s}")]
    NegativeDuration { line: usize, duration_s: f64 },
    #[error("annotation intervals overlap: [{a_onset}, {a_end}) and [{b_onset}, {b_end})")]
    Overlap {
        a_onset: f64,
        a_end: f64,
        b_onset: f64,
        b_end: f64,
    },
    #[error("annotation file: {0}")]
    Csv(String),
}

/// One sampled channel, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignal {
    pub label: String,
    /// Sampling rate in Hz.
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl ChannelSignal {
    pub fn new(label: impl Into<String>, fs: f64, samples: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            fs,
            samples,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// A multichannel recording of one subject.
///
/// Channels may carry different sampling rates (EDF permits it); they always
/// cover the same duration.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub duration_s: f64,
    pub channels: Vec<ChannelSignal>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        duration_s: f64,
        channels: Vec<ChannelSignal>,
    ) -> Result<Self, RecordingError> {
        let rec = Self {
            subject_id: subject_id.into(),
            duration_s,
            channels,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), RecordingError> {
        if !(self.duration_s >= 0.0) {
            return Err(RecordingError::InvalidRecording(format!(
                "duration {} s",
                self.duration_s
            )));
        }
        for ch in &self.channels {
            if !(ch.fs > 0.0) || !ch.fs.is_finite() {
                return Err(RecordingError::InvalidRecording(format!(
                    "channel {} has sampling rate {}",
                    ch.label, ch.fs
                )));
            }
            let expected = (self.duration_s * ch.fs).round() as usize;
            if ch.samples.len() != expected {
                return Err(RecordingError::InvalidRecording(format!(
                    "channel {} has {} samples, expected {expected}",
                    ch.label,
                    ch.samples.len()
                )));
            }
            if let Some(i) = ch.samples.iter().position(|v| !v.is_finite()) {
                return Err(RecordingError::InvalidRecording(format!(
                    "channel {} has a non-finite sample at index {i}",
                    ch.label
                )));
            }
        }
        Ok(())
    }

    /// Common sampling rate, if every channel shares one.
    pub fn fs(&self) -> Option<f64> {
        let first = self.channels.first()?.fs;
        self.channels
            .iter()
            .all(|c| c.fs == first)
            .then_some(first)
    }

    pub fn channel(&self, label: &str) -> Option<&ChannelSignal> {
        self.channels.iter().find(|c| c.label == label)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.label.as_str()).collect()
    }
}

/// The four bipolar derivations used for the training montage.
pub fn default_bipolar_pairs() -> Vec<(String, String)> {
    [("F3", "P3"), ("F4", "P4"), ("F3", "F4"), ("P3", "P4")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

/// Build bipolar channels `A-B = A - B`. The result holds only the derived
/// channels, in the order of `pairs`.
pub fn derive_bipolar(
    rec: &Recording,
    pairs: &[(String, String)],
) -> Result<Recording, RecordingError> {
    let mut channels = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let ca = rec
            .channel(a)
            .ok_or_else(|| RecordingError::MissingChannel(a.clone()))?;
        let cb = rec
            .channel(b)
            .ok_or_else(|| RecordingError::MissingChannel(b.clone()))?;
        if ca.fs != cb.fs || ca.samples.len() != cb.samples.len() {
            return Err(RecordingError::SampleRateMismatch {
                a: a.clone(),
                b: b.clone(),
                fs_a: ca.fs,
                fs_b: cb.fs,
            });
        }
        let samples = ca
            .samples
            .iter()
            .zip(&cb.samples)
            .map(|(x, y)| x - y)
            .collect();
        channels.push(ChannelSignal::new(format!("{a}-{b}"), ca.fs, samples));
    }
    Ok(Recording {
        subject_id: rec.subject_id.clone(),
        duration_s: rec.duration_s,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(chs: Vec<(&str, Vec<f64>)>) -> Recording {
        let n = chs[0].1.len();
        Recording::new(
            "s1",
            n as f64,
            chs.into_iter()
                .map(|(l, s)| ChannelSignal::new(l, 1.0, s))
                .collect(),
        )
        .unwrap()
    }

    fn pair(a: &str, b: &str) -> Vec<(String, String)> {
        vec![(a.to_string(), b.to_string())]
    }

    #[test]
    fn bipolar_difference() {
        let r = rec(vec![("A", vec![1.0, 2.0, 3.0]), ("B", vec![0.5, 1.0, 1.5])]);
        let d = derive_bipolar(&r, &pair("A", "B")).unwrap();
        assert_eq!(d.channels[0].label, "A-B");
        assert_eq!(d.channels[0].samples, vec![0.5, 1.0, 1.5]);
    }

    #[test]
    fn bipolar_of_identical_channels_is_zero() {
        let r = rec(vec![("A", vec![1.0, -2.0, 3.5]), ("B", vec![1.0, -2.0, 3.5])]);
        let d = derive_bipolar(&r, &pair("A", "B")).unwrap();
        assert!(d.channels[0].samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bipolar_missing_channel() {
        let r = rec(vec![("F3", vec![1.0]), ("P3", vec![2.0])]);
        match derive_bipolar(&r, &pair("F3", "X9")) {
            Err(RecordingError::MissingChannel(l)) => assert_eq!(l, "X9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bipolar_rejects_mixed_rates() {
        let r = Recording::new(
            "s",
            2.0,
            vec![
                ChannelSignal::new("A", 1.0, vec![0.0; 2]),
                ChannelSignal::new("B", 2.0, vec![0.0; 4]),
            ],
        )
        .unwrap();
        assert!(matches!(
            derive_bipolar(&r, &pair("A", "B")),
            Err(RecordingError::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn recording_rejects_nan() {
        let err = Recording::new("s", 2.0, vec![ChannelSignal::new("A", 1.0, vec![0.0, f64::NAN])]);
        assert!(matches!(err, Err(RecordingError::InvalidRecording(_))));
    }

    #[test]
    fn common_rate() {
        let r = rec(vec![("A", vec![0.0; 4]), ("B", vec![0.0; 4])]);
        assert_eq!(r.fs(), Some(1.0));
        let m = Recording::new(
            "s",
            2.0,
            vec![
                ChannelSignal::new("A", 1.0, vec![0.0; 2]),
                ChannelSignal::new("B", 2.0, vec![0.0; 4]),
            ],
        )
        .unwrap();
        assert_eq!(m.fs(), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bipolar_is_antisymmetric(
                xs in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..64)
            ) {
                let (a, b): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
                let r = rec(vec![("A", a), ("B", b)]);
                let ab = derive_bipolar(&r, &pair("A", "B")).unwrap();
                let ba = derive_bipolar(&r, &pair("B", "A")).unwrap();
                for (x, y) in ab.channels[0].samples.iter().zip(&ba.channels[0].samples) {
                    prop_assert_eq!(*x, -*y);
                }
            }
        }
    }
}
