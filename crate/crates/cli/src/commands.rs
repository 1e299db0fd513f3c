//! One function per subcommand. Every output except `run_manifest.json` is
//! a pure function of the config and its inputs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use sst_core::dsp::{write_epoch_dump, EpochTensor, EPOCH_SECONDS};
use sst_core::envelope::{compare_to_sst, envelope_features, write_features_csv, SstComparison};
use sst_core::metrics::{pearson, roc_auc, write_eval_csv, write_eval_json, EvalRow, MetricsError};
use sst_core::nn::{load_checkpoint, save_checkpoint, ModelParams};
use sst_core::recording::{epoch_labels, read_annotations, read_edf, AnnotationTrack, SleepLabel};
use sst_core::sst::{
    compute_aeeg, compute_sst, detect_dqs, read_sst_csv, render_svg, write_dqs_csv, write_sst_csv, AnnotationRow,
    ProbSeries, SstTrace,
};
use sst_core::synth::{generate, write_subjects};
use sst_core::train::{build_dataset_with, loso, predict_subject, train, write_history_csv, ChannelSampling, SubjectData, TrainHistory};

use crate::data::{list_recordings, load_subjects, prepare_subject};
use crate::eval::{evaluate, score_trace, SubjectProbs, COMBINED};
use crate::{CliError, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// The one file allowed to differ between identical runs.
fn write_run_manifest(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_json(
        &cfg.out_dir.join("run_manifest.json"),
        &serde_json::json!({ "command": command, "created_unix": created, "config": cfg }),
    )
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

/// Generate the synthetic cohort into `out_dir`; returns the file digests
/// (also written to `synth_manifest.json`).
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<FileDigest>, CliError> {
    let out = out_dir(cfg)?;
    let subjects = generate(&cfg.synth)?;
    let files = write_subjects(out, &subjects)?;
    let digests = files.iter().map(|f| digest(f)).collect::<Result<Vec<_>, _>>()?;
    write_json(&out.join("synth_manifest.json"), &digests)?;
    write_run_manifest(cfg, "synth")?;
    Ok(digests)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessSummary {
    pub subject: String,
    pub channel: String,
    pub n_epochs: usize,
    pub n_rejected: usize,
}

/// Preprocess every recording in `data_dir`; dumps each epoch under
/// `epochs/<subject>/` and writes `preprocess.csv`.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<Vec<PreprocessSummary>, CliError> {
    let out = out_dir(cfg)?.to_path_buf();
    let mut summary = Vec::new();
    for f in list_recordings(&cfg.data_dir)? {
        let (subject, _) = prepare_subject(&f, &[], cfg)?;
        let dir = out.join("epochs").join(&subject.subject_id);
        fs::create_dir_all(&dir)?;
        for ch in &subject.channels {
            for e in ch {
                write_epoch_dump(&dir, &format!("{}_{:05}", e.channel_label, e.epoch_index), e)?;
            }
            summary.push(PreprocessSummary {
                subject: subject.subject_id.clone(),
                channel: ch.first().map(|e| e.channel_label.clone()).unwrap_or_default(),
                n_epochs: ch.len(),
                n_rejected: ch.iter().filter(|e| !e.valid).count(),
            });
        }
    }
    let mut w = csv::Writer::from_path(out.join("preprocess.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
    for row in &summary {
        w.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    write_run_manifest(cfg, "preprocess")?;
    Ok(summary)
}

fn history_json(h: &TrainHistory) -> serde_json::Value {
    serde_json::json!({
        "best_epoch": h.best_epoch,
        "best_val_loss": h.best_val_loss,
        "stop_epoch": h.stop_epoch,
        "n_train": h.n_train,
        "n_val": h.n_val,
    })
}

/// Train one model on every subject in `data_dir` and save `model.json`
/// with its blob and `history.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainHistory, CliError> {
    let out = out_dir(cfg)?.to_path_buf();
    let subjects = load_subjects(cfg)?;
    let ds = build_dataset_with(&subjects, ChannelSampling::All);
    let result = train(&ds, &cfg.train, cfg.train.early_stop_patience)?;
    save_checkpoint(&out.join("model.json"), &result.params, cfg.seed, history_json(&result.history))?;
    write_history_csv(&out.join("history.csv"), &result.history)?;
    write_run_manifest(cfg, "train")?;
    Ok(result.history)
}

fn probs_of(params: &ModelParams<f32>, subject: &SubjectData) -> Result<ProbSeries, CliError> {
    let preds = predict_subject(params, subject)?;
    let names = preds.iter().map(|p| p.channel.clone()).collect();
    let cols: Vec<Vec<Option<f64>>> = preds.into_iter().map(|p| p.p_qs).collect();
    Ok(ProbSeries::from_columns(names, &cols))
}

/// The 64 Hz filtered first channel, rebuilt from its epochs.
fn continuous_64hz(subject: &SubjectData) -> Vec<f64> {
    subject
        .channels
        .first()
        .map(|ch| ch.iter().flat_map(|e: &EpochTensor| e.samples.iter().map(|&v| v as f64)).collect())
        .unwrap_or_default()
}

fn annotation_rows(tracks: &[AnnotationTrack]) -> Vec<AnnotationRow> {
    tracks
        .iter()
        .map(|t| AnnotationRow {
            label: t.expert_id.clone(),
            intervals: t.qs_intervals.clone(),
        })
        .collect()
}

/// SST CSV, DQS CSV and SVG for one trace, named `<stem>.sst.csv` etc.
fn write_trace_outputs(
    dir: &Path,
    stem: &str,
    trace: &SstTrace,
    tracks: &[AnnotationTrack],
    signal_64hz: &[f64],
) -> Result<(), CliError> {
    let dqs = detect_dqs(trace, trace.threshold)?;
    write_sst_csv(&dir.join(format!("{stem}.sst.csv")), trace)?;
    write_dqs_csv(&dir.join(format!("{stem}.dqs.csv")), &dqs, trace.epoch_len_s)?;
    let aeeg = compute_aeeg(signal_64hz).ok();
    let svg = render_svg(trace, &dqs, &annotation_rows(tracks), aeeg.as_deref());
    fs::write(dir.join(format!("{stem}.svg")), svg)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FoldSummary {
    pub subject: String,
    pub history: TrainHistory,
    pub leakage_violations: usize,
    /// Subjects that contributed training or inner-validation samples.
    pub train_subjects: BTreeSet<String>,
    pub val_subjects: BTreeSet<String>,
    pub probs: ProbSeries,
}

#[derive(Debug, Clone)]
pub struct CrossvalReport {
    pub folds: Vec<FoldSummary>,
    pub rows: Vec<EvalRow>,
}

/// Leave-one-subject-out run over `data_dir`: per fold a checkpoint, loss
/// history, SST/DQS/SVG of the held-out subject; overall `metrics.csv`,
/// `metrics.json` and `leakage.csv`.
pub fn cmd_crossval(cfg: &RunConfig) -> Result<CrossvalReport, CliError> {
    let out = out_dir(cfg)?.to_path_buf();
    let subjects = load_subjects(cfg)?;
    let folds = loso(&subjects, &cfg.train)?;
    let mut summaries = Vec::with_capacity(folds.len());
    let mut probs_all = Vec::with_capacity(folds.len());
    for (fold, subject) in folds.iter().zip(&subjects) {
        let dir = out.join("folds").join(&fold.held_out_subject);
        fs::create_dir_all(&dir)?;
        save_checkpoint(&dir.join("model.json"), &fold.params, cfg.seed, history_json(&fold.history))?;
        write_history_csv(&dir.join("history.csv"), &fold.history)?;
        let cols: Vec<Vec<Option<f64>>> = fold.predictions.iter().map(|p| p.p_qs.clone()).collect();
        let names = fold.predictions.iter().map(|p| p.channel.clone()).collect();
        let probs = ProbSeries::from_columns(names, &cols);
        let trace = compute_sst(&probs, cfg.sst.weights.as_deref(), cfg.sst.window, cfg.sst.threshold)?;
        write_trace_outputs(&dir, &fold.held_out_subject, &trace, &subject.tracks, &continuous_64hz(subject))?;
        summaries.push(FoldSummary {
            subject: fold.held_out_subject.clone(),
            history: fold.history.clone(),
            leakage_violations: fold.leakage_violations(),
            train_subjects: fold.train_keys.iter().map(|k| k.0.clone()).collect(),
            val_subjects: fold.val_keys.iter().map(|k| k.0.clone()).collect(),
            probs: probs.clone(),
        });
        probs_all.push(SubjectProbs {
            subject: fold.held_out_subject.clone(),
            probs,
            tracks: subject.tracks.clone(),
        });
    }
    let rows = evaluate(&probs_all, &cfg.sst)?;
    write_eval_csv(&out.join("metrics.csv"), &rows)?;
    write_eval_json(&out.join("metrics.json"), &rows)?;
    let mut w = csv::Writer::from_path(out.join("leakage.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["subject", "violations"]).map_err(|e| CliError::Runtime(e.to_string()))?;
    for s in &summaries {
        w.write_record([s.subject.clone(), s.leakage_violations.to_string()])
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    write_run_manifest(cfg, "crossval")?;
    Ok(CrossvalReport { folds: summaries, rows })
}

fn required<'a>(v: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("`{name}` is required for this command")))
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "recording".into())
}

/// Apply a checkpoint to `recording`; writes `<subject>.sst.csv`,
/// `<subject>.dqs.csv` and `<subject>.svg`.
pub fn cmd_infer(cfg: &RunConfig) -> Result<SstTrace, CliError> {
    let out = out_dir(cfg)?.to_path_buf();
    let (params, _) = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?)?;
    let rec_path = required(&cfg.recording, "recording")?;
    let (subject, _) = prepare_subject(rec_path, &cfg.annotations, cfg)?;
    let probs = probs_of(&params, &subject)?;
    let weights = cfg.sst.weights.as_deref().filter(|w| w.len() == probs.channels.len());
    let trace = compute_sst(&probs, weights, cfg.sst.window, cfg.sst.threshold)?;
    write_trace_outputs(&out, &subject.subject_id, &trace, &subject.tracks, &continuous_64hz(&subject))?;
    write_run_manifest(cfg, "infer")?;
    Ok(trace)
}

fn load_tracks(cfg: &RunConfig) -> Result<Vec<AnnotationTrack>, CliError> {
    let mut tracks = match &cfg.recording {
        Some(r) => crate::data::sidecar_annotations(r)?,
        None => Vec::new(),
    };
    for p in &cfg.annotations {
        tracks.push(read_annotations(p)?);
    }
    Ok(tracks)
}

/// Score an SST CSV against the annotation tracks; writes `eval.csv` and
/// `eval.json` (one `combined` row per expert).
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<EvalRow>, CliError> {
    let out = out_dir(cfg)?.to_path_buf();
    let sst_path = required(&cfg.sst_csv, "sst_csv")?;
    let trace = read_sst_csv(sst_path, cfg.sst.threshold)?;
    let tracks = load_tracks(cfg)?;
    if tracks.is_empty() {
        return Err(CliError::Data("no annotation tracks to evaluate against".into()));
    }
    let subject = file_stem(sst_path).trim_end_matches(".sst").to_string();
    let mut rows = Vec::new();
    for t in &tracks {
        let labels: Vec<SleepLabel> = epoch_labels(t, trace.epochs.len(), EPOCH_SECONDS)
            .into_iter()
            .map(|l| l.label)
            .collect();
        let (cm, scores, truth) = score_trace(&trace, &labels)?;
        let rep = sst_core::metrics::report(&cm).ok();
        let auc = roc_auc(&scores, &truth).ok().map(|r| r.auc);
        rows.push(EvalRow::new(&subject, &t.expert_id, COMBINED, rep.as_ref(), auc));
    }
    write_eval_csv(&out.join("eval.csv"), &rows)?;
    write_eval_json(&out.join("eval.json"), &rows)?;
    write_run_manifest(cfg, "eval")?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub subject: String,
    pub channel: String,
    pub pearson_mean: Option<f64>,
    pub pearson_std: Option<f64>,
    pub roc_mean: Option<f64>,
    pub roc_std: Option<f64>,
    pub n_epochs: usize,
}

/// Envelope comparator for one recording and its SST CSV. Writes
/// `<subject>.envelope.csv` and `<subject>.baseline.json`.
pub fn cmd_baseline(cfg: &RunConfig) -> Result<BaselineReport, CliError> {
    let out = out_dir(cfg)?.to_path_buf();
    let rec_path = required(&cfg.recording, "recording")?;
    let trace = read_sst_csv(required(&cfg.sst_csv, "sst_csv")?, cfg.sst.threshold)?;
    let mut rec = read_edf(rec_path)?;
    rec.subject_id = file_stem(rec_path);
    let derived = crate::data::derive_channels(&rec, &cfg.bipolar_pairs)?;
    let ch = derived
        .channel(&cfg.baseline_channel)
        .or_else(|| derived.channels.first())
        .ok_or_else(|| CliError::Data("recording has no channels".into()))?;
    let features = envelope_features(&ch.samples, ch.fs)?;
    write_features_csv(&out.join(format!("{}.envelope.csv", rec.subject_id)), &features)?;
    if features.len() != trace.epochs.len() {
        return Err(CliError::Data(format!(
            "length mismatch: {} envelope epochs vs {} SST epochs",
            features.len(),
            trace.epochs.len()
        )));
    }
    let tracks = load_tracks(cfg)?;
    let truth: Option<Vec<Option<bool>>> = tracks.first().map(|t| {
        epoch_labels(t, features.len(), EPOCH_SECONDS)
            .iter()
            .map(|l| match l.label {
                SleepLabel::Qs => Some(true),
                SleepLabel::As => Some(false),
                SleepLabel::Excluded => None,
            })
            .collect()
    });
    let compared = truth.as_ref().map(|tr| compare_to_sst(&features, &trace, tr));
    let report = match compared {
        Some(Ok(SstComparison {
            pearson_mean,
            pearson_std,
            roc_mean,
            roc_std,
            n_epochs,
        })) => BaselineReport {
            subject: rec.subject_id.clone(),
            channel: ch.label.clone(),
            pearson_mean: Some(pearson_mean),
            pearson_std: Some(pearson_std),
            roc_mean: Some(roc_mean),
            roc_std: Some(roc_std),
            n_epochs,
        },
        Some(Err(e @ MetricsError::LengthMismatch(..))) => return Err(e.into()),
        // No labels, or a single class or flat feature: report what is defined.
        _ => {
            let (mut m, mut s, mut p) = (Vec::new(), Vec::new(), Vec::new());
            let (mut rm, mut rs, mut lab) = (Vec::new(), Vec::new(), Vec::new());
            for (k, (f, e)) in features.iter().zip(&trace.epochs).enumerate() {
                if let Some(v) = e.p_mean {
                    m.push(f.env_mean);
                    s.push(f.env_std);
                    p.push(v);
                    if let Some(Some(t)) = truth.as_ref().map(|tr| tr[k]) {
                        rm.push(f.env_mean);
                        rs.push(f.env_std);
                        lab.push(t);
                    }
                }
            }
            BaselineReport {
                subject: rec.subject_id.clone(),
                channel: ch.label.clone(),
                pearson_mean: pearson(&m, &p).ok(),
                pearson_std: pearson(&s, &p).ok(),
                roc_mean: roc_auc(&rm, &lab).ok().map(|r| r.auc),
                roc_std: roc_auc(&rs, &lab).ok().map(|r| r.auc),
                n_epochs: if truth.is_some() { lab.len() } else { p.len() },
            }
        }
    };
    write_json(&out.join(format!("{}.baseline.json", rec.subject_id)), &report)?;
    write_run_manifest(cfg, "baseline")?;
    Ok(report)
}
