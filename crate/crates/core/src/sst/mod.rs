//! The Sleep State Trend: channel fusion, median smoothing, the min/max
//! uncertainty band, dichotomic QS detection (DQS), the aEEG companion
//! trend and SVG rendering.

mod aeeg;
mod svg;
mod trend;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aeeg::{aeeg_display_y, compute_aeeg, percentile, AeegBand, AEEG_HIGH_HZ, AEEG_LOW_HZ, AEEG_SMOOTH_S};
pub use svg::{render_svg, AnnotationRow, SVG_HEIGHT, SVG_PX_PER_HOUR};
pub use trend::{compute_sst, detect_dqs, fuse_channels, median_smooth};

use crate::dsp::DspError;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum SstError {
    #[error("median window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("invalid channel weights: {0}")]
    InvalidWeights(String),
    #[error("threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("probability {value} at epoch {epoch} is outside [0, 1]")]
    InvalidProbability { epoch: usize, value: f64 },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-epoch QS probabilities, one row per epoch and one column per
/// channel. `None` marks a rejected epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbSeries {
    pub channels: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl ProbSeries {
    /// Build from per-channel columns; shorter columns are padded with
    /// missing values.
    pub fn from_columns(channels: Vec<String>, columns: &[Vec<Option<f64>>]) -> Self {
        let n = columns.iter().map(Vec::len).max().unwrap_or(0);
        let rows = (0..n)
            .map(|k| columns.iter().map(|c| c.get(k).copied().flatten()).collect())
            .collect();
        Self { channels, rows }
    }

    pub fn n_epochs(&self) -> usize {
        self.rows.len()
    }

    /// Column `c` as its own single-channel series.
    pub fn channel(&self, c: usize) -> ProbSeries {
        ProbSeries {
            channels: vec![self.channels[c].clone()],
            rows: self.rows.iter().map(|r| vec![r[c]]).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SstError> {
        for (epoch, row) in self.rows.iter().enumerate() {
            for &value in row.iter().flatten() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(SstError::InvalidProbability { epoch, value });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "QS")]
    Qs,
    #[serde(rename = "AS")]
    As,
    Gap,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Qs => "QS",
            Decision::As => "AS",
            Decision::Gap => "Gap",
        }
    }
}

/// One minute of the trend. All probability fields are `None` exactly when
/// the decision is `Gap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SstEpoch {
    pub epoch_index: usize,
    pub t_start_s: f64,
    pub p_mean: Option<f64>,
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub p_smoothed: Option<f64>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SstTrace {
    pub epoch_len_s: f64,
    pub threshold: f64,
    pub epochs: Vec<SstEpoch>,
}

/// Half-open run of QS epochs `[start_epoch, end_epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QsInterval {
    pub start_epoch: usize,
    pub end_epoch: usize,
}

impl QsInterval {
    pub fn len(&self) -> usize {
        self.end_epoch - self.start_epoch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `epoch_index,t_start_s,p_mean,p_min,p_max,p_smoothed,decision`; missing
/// values are empty fields.
pub fn write_sst_csv(path: &Path, trace: &SstTrace) -> Result<(), SstError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["epoch_index", "t_start_s", "p_mean", "p_min", "p_max", "p_smoothed", "decision"])
        .map_err(csv_io)?;
    for e in &trace.epochs {
        w.write_record([
            e.epoch_index.to_string(),
            format!("{}", e.t_start_s),
            opt(e.p_mean),
            opt(e.p_min),
            opt(e.p_max),
            opt(e.p_smoothed),
            e.decision.as_str().to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// `start_s,end_s`, one row per DQS interval.
pub fn write_dqs_csv(path: &Path, dqs: &[QsInterval], epoch_len_s: f64) -> Result<(), SstError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(["start_s", "end_s"]).map_err(csv_io)?;
    for iv in dqs {
        w.write_record([
            format!("{}", iv.start_epoch as f64 * epoch_len_s),
            format!("{}", iv.end_epoch as f64 * epoch_len_s),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a file written by [`write_sst_csv`]. The threshold is not stored in
/// the file and must be supplied.
pub fn read_sst_csv(path: &Path, threshold: f64) -> Result<SstTrace, SstError> {
    let bad = |line: usize, m: &str| SstError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{line}: {m}", path.display())));
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    let mut epochs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_io)?;
        let line = i + 2;
        if rec.len() != 7 {
            return Err(bad(line, "expected 7 fields"));
        }
        let num = |j: usize| -> Result<Option<f64>, SstError> {
            match rec[j].trim() {
                "" => Ok(None),
                t => t.parse().map(Some).map_err(|_| bad(line, "not a number")),
            }
        };
        let decision = match &rec[6] {
            "QS" => Decision::Qs,
            "AS" => Decision::As,
            "Gap" => Decision::Gap,
            _ => return Err(bad(line, "unknown decision")),
        };
        epochs.push(SstEpoch {
            epoch_index: rec[0].parse().map_err(|_| bad(line, "bad epoch index"))?,
            t_start_s: num(1)?.ok_or_else(|| bad(line, "missing t_start_s"))?,
            p_mean: num(2)?,
            p_min: num(3)?,
            p_max: num(4)?,
            p_smoothed: num(5)?,
            decision,
        });
    }
    Ok(SstTrace {
        epoch_len_s: crate::dsp::EPOCH_SECONDS,
        threshold,
        epochs,
    })
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}
