//! Confusion-matrix metrics with QS as the positive class, ROC/AUC and
//! Pearson correlation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recording::SleepLabel;
use crate::sst::Decision;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no scored epochs")]
    Empty,
    #[error("ROC needs both classes in the reference labels")]
    SingleClass,
    #[error("correlation needs non-zero variance in both inputs")]
    ZeroVariance,
}

/// A binary QS/AS label; `None` means the epoch is not scored (Excluded,
/// Gap, rejected).
pub trait BinaryLabel {
    fn is_qs(&self) -> Option<bool>;
}

impl BinaryLabel for bool {
    fn is_qs(&self) -> Option<bool> {
        Some(*self)
    }
}

impl BinaryLabel for Option<bool> {
    fn is_qs(&self) -> Option<bool> {
        *self
    }
}

impl BinaryLabel for SleepLabel {
    fn is_qs(&self) -> Option<bool> {
        match self {
            SleepLabel::Qs => Some(true),
            SleepLabel::As => Some(false),
            SleepLabel::Excluded => None,
        }
    }
}

impl BinaryLabel for Decision {
    fn is_qs(&self) -> Option<bool> {
        match self {
            Decision::Qs => Some(true),
            Decision::As => Some(false),
            Decision::Gap => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Count agreements; pairs where either side is unscored are dropped.
pub fn confusion<P: BinaryLabel, T: BinaryLabel>(pred: &[P], truth: &[T]) -> Result<ConfusionMatrix, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in pred.iter().zip(truth) {
        match (p.is_qs(), t.is_qs()) {
            (Some(true), Some(true)) => cm.tp += 1,
            (Some(false), Some(false)) => cm.tn += 1,
            (Some(true), Some(false)) => cm.fp += 1,
            (Some(false), Some(true)) => cm.fn_ += 1,
            _ => {}
        }
    }
    Ok(cm)
}

/// Undefined ratios (zero denominators) are `None` rather than 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_epochs: u64,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricReport, MetricsError> {
    let n = cm.total();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let total = n as f64;
    let po = (tp + tn) / total;
    let pe = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (total * total);
    Ok(MetricReport {
        n_epochs: n,
        accuracy: po,
        precision: (tp + fp > 0.0).then(|| tp / (tp + fp)),
        f1: (2.0 * tp + fp + fn_ > 0.0).then(|| 2.0 * tp / (2.0 * tp + fp + fn_)),
        kappa: (pe < 1.0).then(|| (po - pe) / (1.0 - pe)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0, 0) to (1, 1), one step per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC by sweeping the threshold over the distinct scores (higher score =
/// more QS); tied scores form one step. AUC by the trapezoid rule.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<RocCurve, MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), truth.len()));
    }
    let pos = truth.iter().filter(|&&t| t).count() as f64;
    let neg = truth.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let (x1, y1) = (fp / neg, tp / pos);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Median with (min, max), as used for per-subject summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianRange {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median_range(values: &[f64]) -> Option<MedianRange> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    Some(MedianRange {
        median,
        min: v[0],
        max: v[n - 1],
    })
}

/// One row of an evaluation report. `subject` is a subject id, `pooled` or
/// `median`; `channel` a derivation label or `combined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub subject: String,
    pub expert: String,
    pub channel: String,
    pub n_epochs: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
    pub auc: Option<f64>,
}

impl EvalRow {
    pub fn new(subject: &str, expert: &str, channel: &str, rep: Option<&MetricReport>, auc: Option<f64>) -> Self {
        Self {
            subject: subject.into(),
            expert: expert.into(),
            channel: channel.into(),
            n_epochs: rep.map_or(0, |r| r.n_epochs),
            accuracy: rep.map(|r| r.accuracy),
            precision: rep.and_then(|r| r.precision),
            f1: rep.and_then(|r| r.f1),
            kappa: rep.and_then(|r| r.kappa),
            auc,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with fixed six-decimal formatting; undefined values are empty.
pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject", "expert", "channel", "n_epochs", "accuracy", "precision", "f1", "kappa", "auc"])?;
    for r in rows {
        w.write_record([
            r.subject.clone(),
            r.expert.clone(),
            r.channel.clone(),
            r.n_epochs.to_string(),
            fmt_opt(r.accuracy),
            fmt_opt(r.precision),
            fmt_opt(r.f1),
            fmt_opt(r.kappa),
            fmt_opt(r.auc),
        ])?;
    }
    w.flush()
}

pub fn write_eval_json(path: &Path, rows: &[EvalRow]) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(rows).map_err(std::io::Error::other)?)
}
