//! Locating recordings and their annotation sidecars, and turning them into
//! preprocessed subjects.

use std::path::{Path, PathBuf};

use sst_core::dsp::preprocess_recording;
use sst_core::recording::{derive_bipolar, read_annotations, read_edf, AnnotationTrack, Recording, RecordingError};
use sst_core::train::SubjectData;

use crate::{CliError, RunConfig};

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Every `*.edf` in `dir`, sorted by name.
pub fn list_recordings(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("edf")))
        .collect();
    out.sort();
    Ok(out)
}

/// Annotation files `<stem>.<expert>.csv` next to `edf`, sorted by expert.
/// The expert id is taken from the file name.
pub fn sidecar_annotations(edf: &Path) -> Result<Vec<AnnotationTrack>, CliError> {
    let dir = edf.parent().unwrap_or(Path::new("."));
    let prefix = format!("{}.", stem(edf));
    let mut found: Vec<(String, PathBuf)> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let expert = name.strip_prefix(&prefix)?.strip_suffix(".csv")?.to_string();
            (!expert.is_empty()).then(|| (expert, e.path()))
        })
        .collect();
    found.sort();
    found
        .into_iter()
        .map(|(expert, path)| {
            let mut t = read_annotations(&path)?;
            t.expert_id = expert;
            Ok(t)
        })
        .collect()
}

/// Bipolar derivations when the referential electrodes are present;
/// otherwise the channels as recorded (already-derived or single-channel
/// files).
pub fn derive_channels(rec: &Recording, pairs: &[(String, String)]) -> Result<Recording, CliError> {
    match derive_bipolar(rec, pairs) {
        Ok(r) => Ok(r),
        Err(RecordingError::MissingChannel(_)) => Ok(rec.clone()),
        Err(e) => Err(e.into()),
    }
}

/// Read, derive and preprocess one recording. The subject id is the file
/// stem. Returns the derived recording as well.
pub fn prepare_subject(
    edf: &Path,
    extra_tracks: &[PathBuf],
    cfg: &RunConfig,
) -> Result<(SubjectData, Recording), CliError> {
    let mut rec = read_edf(edf)?;
    rec.subject_id = stem(edf);
    let mut tracks = sidecar_annotations(edf)?;
    for p in extra_tracks {
        tracks.push(read_annotations(p)?);
    }
    for t in &tracks {
        t.check_within(rec.duration_s)?;
    }
    let derived = derive_channels(&rec, &cfg.bipolar_pairs)?;
    let channels = preprocess_recording(&derived, &cfg.preprocess)?;
    Ok((
        SubjectData {
            subject_id: rec.subject_id.clone(),
            channels,
            tracks,
        },
        derived,
    ))
}

/// Every subject in `cfg.data_dir`, one at a time so raw signals are freed.
pub fn load_subjects(cfg: &RunConfig) -> Result<Vec<SubjectData>, CliError> {
    let files = list_recordings(&cfg.data_dir)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("no .edf files in {}", cfg.data_dir.display())));
    }
    files
        .iter()
        .map(|f| {
            log::info!("loading {}", f.display());
            prepare_subject(f, &[], cfg).map(|(s, _)| s)
        })
        .collect()
}
