//! Scoring SST decisions against expert annotations, per channel and for
//! the fused trace, in the report layout used by `crossval` and `eval`.

use sst_core::dsp::EPOCH_SECONDS;
use sst_core::metrics::{confusion, median_range, report, roc_auc, ConfusionMatrix, EvalRow, MetricReport};
use sst_core::recording::{epoch_labels, AnnotationTrack, SleepLabel};
use sst_core::sst::{compute_sst, Decision, ProbSeries, SstTrace};

use crate::config::SstSettings;
use crate::CliError;

pub const COMBINED: &str = "combined";
/// Fused trace thresholded without the median filter.
pub const COMBINED_UNSMOOTHED: &str = "combined_unsmoothed";
pub const POOLED: &str = "pooled";

/// Held-out probabilities of one subject with its reference tracks.
#[derive(Debug, Clone)]
pub struct SubjectProbs {
    pub subject: String,
    pub probs: ProbSeries,
    pub tracks: Vec<AnnotationTrack>,
}

#[derive(Debug, Clone, Default)]
struct Scored {
    cm: ConfusionMatrix,
    scores: Vec<f64>,
    truth: Vec<bool>,
}

impl Scored {
    fn merge(&mut self, other: &Scored) {
        self.cm = self.cm + other.cm;
        self.scores.extend_from_slice(&other.scores);
        self.truth.extend_from_slice(&other.truth);
    }

    fn report(&self) -> Option<MetricReport> {
        report(&self.cm).ok()
    }

    fn auc(&self) -> Option<f64> {
        roc_auc(&self.scores, &self.truth).ok().map(|r| r.auc)
    }
}

/// Decisions vs labels; scores are the smoothed probabilities of the
/// epochs that are both decided and labelled QS/AS.
pub fn score_trace(trace: &SstTrace, labels: &[SleepLabel]) -> Result<(ConfusionMatrix, Vec<f64>, Vec<bool>), CliError> {
    let decisions: Vec<Decision> = trace.epochs.iter().map(|e| e.decision).collect();
    let cm = confusion(&decisions, labels)?;
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for (e, l) in trace.epochs.iter().zip(labels) {
        if let (Some(p), SleepLabel::Qs | SleepLabel::As) = (e.p_smoothed, l) {
            scores.push(p);
            truth.push(*l == SleepLabel::Qs);
        }
    }
    Ok((cm, scores, truth))
}

/// Traces scored for one subject: each channel alone, the fused trace and
/// the fused trace without smoothing.
pub fn subject_traces(p: &SubjectProbs, s: &SstSettings) -> Result<Vec<(String, SstTrace)>, CliError> {
    let mut out = Vec::new();
    for c in 0..p.probs.channels.len() {
        out.push((
            p.probs.channels[c].clone(),
            compute_sst(&p.probs.channel(c), None, s.window, s.threshold)?,
        ));
    }
    let w = s.weights.as_deref();
    out.push((COMBINED.into(), compute_sst(&p.probs, w, s.window, s.threshold)?));
    out.push((COMBINED_UNSMOOTHED.into(), compute_sst(&p.probs, w, 1, s.threshold)?));
    Ok(out)
}

fn aggregate_rows(expert: &str, channel: &str, per_subject: &[EvalRow], pooled: &Scored) -> Vec<EvalRow> {
    let mut rows = vec![EvalRow::new(POOLED, expert, channel, pooled.report().as_ref(), pooled.auc())];
    let pick = |f: fn(&EvalRow) -> Option<f64>| -> Vec<f64> { per_subject.iter().filter_map(f).collect() };
    let stats = [
        median_range(&pick(|r| r.accuracy)),
        median_range(&pick(|r| r.precision)),
        median_range(&pick(|r| r.f1)),
        median_range(&pick(|r| r.kappa)),
        median_range(&pick(|r| r.auc)),
    ];
    for (name, get) in [
        ("median", (|m| m.median) as fn(&sst_core::metrics::MedianRange) -> f64),
        ("min", |m| m.min),
        ("max", |m| m.max),
    ] {
        let v: Vec<Option<f64>> = stats.iter().map(|s| s.as_ref().map(get)).collect();
        rows.push(EvalRow {
            subject: name.into(),
            expert: expert.into(),
            channel: channel.into(),
            n_epochs: pooled.cm.total(),
            accuracy: v[0],
            precision: v[1],
            f1: v[2],
            kappa: v[3],
            auc: v[4],
        });
    }
    rows
}

/// Report rows: every subject x expert x channel, then for each expert and
/// channel a pooled row (summed confusion, AUC over all epochs) and the
/// median, min and max across subjects.
pub fn evaluate(subjects: &[SubjectProbs], s: &SstSettings) -> Result<Vec<EvalRow>, CliError> {
    let mut rows = Vec::new();
    // (expert, channel) -> pooled scores and per-subject rows, first-seen order.
    let mut groups: Vec<((String, String), Scored, Vec<EvalRow>)> = Vec::new();
    for p in subjects {
        let traces = subject_traces(p, s)?;
        let n = p.probs.n_epochs();
        for track in &p.tracks {
            let labels: Vec<SleepLabel> = epoch_labels(track, n, EPOCH_SECONDS).into_iter().map(|l| l.label).collect();
            for (channel, trace) in &traces {
                let (cm, scores, truth) = score_trace(trace, &labels)?;
                let sc = Scored { cm, scores, truth };
                let row = EvalRow::new(&p.subject, &track.expert_id, channel, sc.report().as_ref(), sc.auc());
                let key = (track.expert_id.clone(), channel.clone());
                match groups.iter_mut().find(|g| g.0 == key) {
                    Some(g) => {
                        g.1.merge(&sc);
                        g.2.push(row.clone());
                    }
                    None => groups.push((key, sc, vec![row.clone()])),
                }
                rows.push(row);
            }
        }
    }
    for ((expert, channel), pooled, per_subject) in &groups {
        rows.extend(aggregate_rows(expert, channel, per_subject, pooled));
    }
    Ok(rows)
}

/// First row matching all three keys.
pub fn find_row<'a>(rows: &'a [EvalRow], subject: &str, expert: &str, channel: &str) -> Option<&'a EvalRow> {
    rows.iter()
        .find(|r| r.subject == subject && r.expert == expert && r.channel == channel)
}
