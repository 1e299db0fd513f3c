//! Expert quiet-sleep annotations and their conversion to epoch labels.
//!
//! The sidecar format is a CSV with header `onset_s,duration_s,label`. Only
//! rows labelled `QS` are kept; any other label is ignored, since time outside
//! a QS interval counts as active sleep.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RecordingError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub onset_s: f64,
    pub duration_s: f64,
}

impl Interval {
    pub fn new(onset_s: f64, duration_s: f64) -> Self {
        Self {
            onset_s,
            duration_s,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

/// QS intervals marked by one expert, sorted and non-overlapping.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTrack {
    pub expert_id: String,
    pub qs_intervals: Vec<Interval>,
    /// Annotation resolution in seconds.
    pub resolution_s: f64,
}

impl AnnotationTrack {
    /// Build a track, sorting the intervals and rejecting negative durations
    /// or overlaps. Touching intervals are allowed.
    pub fn new(
        expert_id: impl Into<String>,
        mut intervals: Vec<Interval>,
    ) -> Result<Self, RecordingError> {
        for (i, iv) in intervals.iter().enumerate() {
            if iv.duration_s < 0.0 || !iv.duration_s.is_finite() {
                return Err(RecordingError::NegativeDuration {
                    line: i + 2,
                    duration_s: iv.duration_s,
                });
            }
        }
        intervals.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.end_s().total_cmp(&b.end_s())));
        for w in intervals.windows(2) {
            if w[1].onset_s < w[0].end_s() {
                return Err(RecordingError::Overlap {
                    a_onset: w[0].onset_s,
                    a_end: w[0].end_s(),
                    b_onset: w[1].onset_s,
                    b_end: w[1].end_s(),
                });
            }
        }
        Ok(Self {
            expert_id: expert_id.into(),
            qs_intervals: intervals,
            resolution_s: 1.0,
        })
    }

    pub fn empty(expert_id: impl Into<String>) -> Self {
        Self {
            expert_id: expert_id.into(),
            qs_intervals: Vec::new(),
            resolution_s: 1.0,
        }
    }

    /// Total annotated QS time in seconds.
    pub fn qs_seconds(&self) -> f64 {
        self.qs_intervals.iter().map(|i| i.duration_s).sum()
    }

    pub fn check_within(&self, duration_s: f64) -> Result<(), RecordingError> {
        match self.qs_intervals.last() {
            Some(last) if last.end_s() > duration_s || self.qs_intervals[0].onset_s < 0.0 => {
                Err(RecordingError::InvalidRecording(format!(
                    "annotation {} extends outside the recording ({duration_s} s)",
                    self.expert_id
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    onset_s: f64,
    duration_s: f64,
    label: String,
}

/// Read a sidecar annotation CSV. The expert id is the file stem.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationTrack, RecordingError> {
    let path = path.as_ref();
    let expert = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_annotations(fs::File::open(path)?, expert)
}

pub fn parse_annotations(
    reader: impl Read,
    expert_id: impl Into<String>,
) -> Result<AnnotationTrack, RecordingError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut intervals = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| RecordingError::Csv(e.to_string()))?;
        if row.duration_s < 0.0 {
            return Err(RecordingError::NegativeDuration {
                line: i + 2,
                duration_s: row.duration_s,
            });
        }
        if row.label == "QS" {
            intervals.push(Interval::new(row.onset_s, row.duration_s));
        }
    }
    AnnotationTrack::new(expert_id, intervals)
}

pub fn write_annotations(path: impl AsRef<Path>, track: &AnnotationTrack) -> Result<(), RecordingError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RecordingError::Csv(e.to_string()))?;
    for iv in &track.qs_intervals {
        w.serialize(Row {
            onset_s: iv.onset_s,
            duration_s: iv.duration_s,
            label: "QS".into(),
        })
        .map_err(|e| RecordingError::Csv(e.to_string()))?;
    }
    if track.qs_intervals.is_empty() {
        w.write_record(["onset_s", "duration_s", "label"])
            .map_err(|e| RecordingError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SleepLabel {
    #[serde(rename = "QS")]
    Qs,
    #[serde(rename = "AS")]
    As,
    Excluded,
}

impl SleepLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SleepLabel::Qs => "QS",
            SleepLabel::As => "AS",
            SleepLabel::Excluded => "Excluded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochLabel {
    pub epoch_index: usize,
    pub label: SleepLabel,
}

/// Label consecutive epochs of `epoch_len_s`: QS when the epoch lies entirely
/// inside annotated QS, AS when it touches no QS at all, Excluded when mixed.
pub fn epoch_labels(track: &AnnotationTrack, n_epochs: usize, epoch_len_s: f64) -> Vec<EpochLabel> {
    // Merge touching intervals so an epoch covered by two adjacent marks is QS.
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(track.qs_intervals.len());
    let mut sorted = track.qs_intervals.clone();
    sorted.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for iv in sorted.iter().filter(|i| i.duration_s > 0.0) {
        match merged.last_mut() {
            Some(last) if iv.onset_s <= last.1 => last.1 = last.1.max(iv.end_s()),
            _ => merged.push((iv.onset_s, iv.end_s())),
        }
    }

    (0..n_epochs)
        .map(|k| {
            let start = k as f64 * epoch_len_s;
            let end = start + epoch_len_s;
            let covered = merged.iter().any(|&(a, b)| a <= start && b >= end);
            let touched = merged.iter().any(|&(a, b)| a < end && b > start);
            let label = if covered {
                SleepLabel::Qs
            } else if touched {
                SleepLabel::Excluded
            } else {
                SleepLabel::As
            };
            EpochLabel {
                epoch_index: k,
                label,
            }
        })
        .collect()
}
