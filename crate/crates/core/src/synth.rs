//! Deterministic synthetic neonatal EEG with known sleep states.
//!
//! Each subject alternates active sleep (continuous band-limited 1/f noise)
//! and quiet sleep (bursts alternating with low-voltage inter-burst
//! intervals) on a cycle of tens of minutes. Four referential channels share
//! the state timing and carry independent noise. The annotation track is
//! written from the same state machine that shapes the waveform.

use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::init::derive_seed;
use crate::recording::{write_annotations, write_edf, AnnotationTrack, ChannelSignal, Interval, Recording, RecordingError};

pub const SYNTH_FS: f64 = 256.0;
pub const REFERENTIAL_CHANNELS: [&str; 4] = ["F3", "F4", "P3", "P4"];
pub const PRIMARY_EXPERT: &str = "A";
pub const SECOND_EXPERT: &str = "B";

/// Band of the background noise.
const NOISE_BAND_HZ: (f64, f64) = (0.5, 30.0);
/// Per-channel polarity of movement artifacts. Every default bipolar pair
/// sees twice the referential amplitude.
const MOVEMENT_SIGNS: [f64; 4] = [1.0, -1.0, -1.0, 1.0];
const ECG_GAINS: [f64; 4] = [1.0, -0.8, 0.6, -0.4];
const LINE_GAINS: [f64; 4] = [1.0, 0.7, 0.4, 0.85];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Recording(#[from] RecordingError),
}

/// Generator settings. Ranges are `[low, high]`; amplitudes are for the
/// bipolar derivations (referential channels carry 1/sqrt(2) of them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub duration_min: u32,
    /// Sleep-cycle period in minutes, drawn once per subject.
    pub cycle_min: [f64; 2],
    /// Share of each cycle spent in quiet sleep.
    pub qs_fraction: f64,
    pub as_rms_uv: [f64; 2],
    pub burst_peak_uv: [f64; 2],
    pub burst_s: [f64; 2],
    pub ibi_peak_uv: [f64; 2],
    pub ibi_s: [f64; 2],
    /// Mean number of movement artifacts per hour (Poisson).
    pub artifacts_per_hour: f64,
    /// Referential peak of a movement artifact.
    pub artifact_peak_uv: f64,
    /// When set, a second expert track whose QS boundaries are shifted by up
    /// to this many seconds.
    pub second_expert_jitter_s: Option<u32>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_subjects: 4,
            duration_min: 180,
            cycle_min: [40.0, 70.0],
            qs_fraction: 0.35,
            as_rms_uv: [15.0, 30.0],
            burst_peak_uv: [50.0, 150.0],
            burst_s: [3.0, 8.0],
            ibi_peak_uv: [5.0, 25.0],
            ibi_s: [3.0, 10.0],
            artifacts_per_hour: 0.0,
            artifact_peak_uv: 200.0,
            second_expert_jitter_s: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        for (name, r) in [
            ("cycle_min", self.cycle_min),
            ("as_rms_uv", self.as_rms_uv),
            ("burst_peak_uv", self.burst_peak_uv),
            ("burst_s", self.burst_s),
            ("ibi_peak_uv", self.ibi_peak_uv),
            ("ibi_s", self.ibi_s),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return bad(format!("{name} must be positive and ordered, got {r:?}"));
            }
        }
        if !(self.qs_fraction > 0.0 && self.qs_fraction < 1.0) {
            return bad(format!("qs_fraction must lie in (0, 1), got {}", self.qs_fraction));
        }
        if !(self.artifacts_per_hour >= 0.0 && self.artifacts_per_hour.is_finite()) {
            return bad(format!("artifacts_per_hour must be >= 0, got {}", self.artifacts_per_hour));
        }
        if !(self.artifact_peak_uv > 0.0) {
            return bad(format!("artifact_peak_uv must be > 0, got {}", self.artifact_peak_uv));
        }
        if self.duration_min == 0 {
            return bad("duration_min must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthState {
    As,
    Qs,
}

/// A state held over whole seconds `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSegment {
    pub start_s: u64,
    pub end_s: u64,
    pub state: SynthState,
}

#[derive(Debug, Clone)]
pub struct SynthSubject {
    pub recording: Recording,
    pub states: Vec<StateSegment>,
    /// Primary track first, then the jittered one if configured.
    pub truth: Vec<AnnotationTrack>,
    pub artifact_onsets_s: Vec<f64>,
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Generate every subject, in parallel.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSubject>, SynthError> {
    cfg.validate()?;
    (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(cfg, i))
        .collect()
}

/// Generate subject `index` alone; identical to the matching element of
/// [`generate`].
pub fn generate_subject(cfg: &SynthConfig, index: usize) -> Result<SynthSubject, SynthError> {
    cfg.validate()?;
    let seed = derive_seed(cfg.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration_s = cfg.duration_min as u64 * 60;
    let n = (duration_s as f64 * SYNTH_FS) as usize;

    let states = state_timeline(cfg, duration_s, &mut rng);
    let level = amplitude_levels(cfg, &states, n, &mut rng);
    let gains: Vec<f64> = (0..REFERENTIAL_CHANNELS.len()).map(|_| rng.random_range(0.85..1.15)).collect();

    let channels: Vec<ChannelSignal> = REFERENTIAL_CHANNELS
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let mut crng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + c as u64));
            let carrier = colored_noise(n, SYNTH_FS, &mut crng);
            let g = gains[c] / std::f64::consts::SQRT_2;
            // Soft limit at three times the local RMS keeps peaks bounded.
            let samples = carrier
                .iter()
                .zip(&level)
                .map(|(z, l)| g * 3.0 * l * (z / 3.0).tanh())
                .collect();
            ChannelSignal::new(*label, SYNTH_FS, samples)
        })
        .collect();
    let mut recording = Recording::new(subject_id(index), duration_s as f64, channels)?;

    let mut arng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 200));
    let artifact_onsets_s = add_movements(&mut recording, cfg.artifacts_per_hour, cfg.artifact_peak_uv, &mut arng);

    let qs: Vec<Interval> = states
        .iter()
        .filter(|s| s.state == SynthState::Qs)
        .map(|s| Interval::new(s.start_s as f64, (s.end_s - s.start_s) as f64))
        .collect();
    let mut truth = vec![AnnotationTrack::new(PRIMARY_EXPERT, qs.clone())?];
    if let Some(j) = cfg.second_expert_jitter_s {
        let mut jrng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 300));
        truth.push(AnnotationTrack::new(SECOND_EXPERT, jitter_intervals(&qs, j, duration_s, &mut jrng))?);
    }
    Ok(SynthSubject {
        recording,
        states,
        truth,
        artifact_onsets_s,
    })
}

fn state_timeline(cfg: &SynthConfig, duration_s: u64, rng: &mut ChaCha8Rng) -> Vec<StateSegment> {
    let period = (rng.random_range(cfg.cycle_min[0]..=cfg.cycle_min[1]) * 60.0).round() as u64;
    let qs_len = ((cfg.qs_fraction * period as f64).round() as u64).clamp(1, period - 1);
    let as_len = period - qs_len;
    let offset = rng.random_range(0..period) as i64;
    let mut out = Vec::new();
    let mut t = -offset;
    while t < duration_s as i64 {
        for (state, len) in [(SynthState::As, as_len), (SynthState::Qs, qs_len)] {
            let (a, b) = (t.max(0) as u64, (t + len as i64).clamp(0, duration_s as i64) as u64);
            if b > a {
                out.push(StateSegment {
                    start_s: a,
                    end_s: b,
                    state,
                });
            }
            t += len as i64;
        }
    }
    out
}

/// Local RMS of the waveform at every sample.
fn amplitude_levels(cfg: &SynthConfig, states: &[StateSegment], n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let as_rms = rng.random_range(cfg.as_rms_uv[0]..=cfg.as_rms_uv[1]);
    let mut level = vec![as_rms; n];
    for s in states.iter().filter(|s| s.state == SynthState::Qs) {
        let end = ((s.end_s as f64 * SYNTH_FS) as usize).min(n);
        let mut i = (s.start_s as f64 * SYNTH_FS) as usize;
        let mut burst = true;
        while i < end {
            let (dur, peak) = if burst { (cfg.burst_s, cfg.burst_peak_uv) } else { (cfg.ibi_s, cfg.ibi_peak_uv) };
            let len = (rng.random_range(dur[0]..=dur[1]) * SYNTH_FS) as usize;
            let rms = rng.random_range(peak[0]..=peak[1]) / 3.0;
            let stop = (i + len.max(1)).min(end);
            level[i..stop].fill(rms);
            i = stop;
            burst = !burst;
        }
    }
    level
}

/// Unit-RMS Gaussian noise with a 1/f power spectrum inside the noise band.
fn colored_noise(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..n.div_ceil(2) {
        let f = k as f64 * fs / n as f64;
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        if (NOISE_BAND_HZ.0..=NOISE_BAND_HZ.1).contains(&f) {
            let z = Complex::new(re, im) / f.sqrt();
            spec[k] = z;
            spec[n - k] = z.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let x: Vec<f64> = spec.iter().map(|z| z.re).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        x.iter().map(|v| v / rms).collect()
    } else {
        x
    }
}

fn jitter_intervals(qs: &[Interval], jitter: u32, duration_s: u64, rng: &mut ChaCha8Rng) -> Vec<Interval> {
    let j = jitter as i64;
    let mut out: Vec<Interval> = Vec::with_capacity(qs.len());
    for iv in qs {
        let prev_end = out.last().map_or(0, |p: &Interval| p.end_s() as i64);
        let on = (iv.onset_s as i64 + rng.random_range(-j..=j)).max(prev_end);
        let end = (iv.end_s() as i64 + rng.random_range(-j..=j)).min(duration_s as i64);
        if end > on {
            out.push(Interval::new(on as f64, (end - on) as f64));
        }
    }
    out
}

/// Additive contaminants for robustness checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Contaminant {
    /// Narrow cardiac-like spikes at a rate drawn from 1-2 Hz.
    EcgLike { amplitude_uv: f64 },
    /// Half-sine bumps of 1-3 s with electrode-dependent polarity.
    Movement { amplitude_uv: f64, per_hour: f64 },
    /// Mains interference.
    Line { amplitude_uv: f64, freq_hz: f64 },
}

/// Add a contaminant to every channel. Annotations are unaffected.
pub fn inject_noise(rec: &Recording, kind: Contaminant, seed: u64) -> Recording {
    let mut out = rec.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        Contaminant::EcgLike { amplitude_uv } if amplitude_uv != 0.0 => {
            let rate = rng.random_range(1.0..=2.0);
            let beats: Vec<f64> = (0..(rec.duration_s * rate) as usize)
                .map(|k| (k as f64 + rng.random_range(-0.02..0.02)) / rate)
                .collect();
            let width = 0.015;
            for (c, ch) in out.channels.iter_mut().enumerate() {
                let a = amplitude_uv * ECG_GAINS[c % 4];
                let reach = (4.0 * width * ch.fs).ceil() as i64;
                for &t in &beats {
                    let center = (t * ch.fs).round() as i64;
                    for i in (center - reach).max(0)..(center + reach + 1).min(ch.samples.len() as i64) {
                        let dt = i as f64 / ch.fs - t;
                        ch.samples[i as usize] += a * (-0.5 * (dt / width).powi(2)).exp();
                    }
                }
            }
        }
        Contaminant::Movement { amplitude_uv, per_hour } if amplitude_uv != 0.0 => {
            add_movements(&mut out, per_hour, amplitude_uv, &mut rng);
        }
        Contaminant::Line { amplitude_uv, freq_hz } if amplitude_uv != 0.0 => {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for (c, ch) in out.channels.iter_mut().enumerate() {
                let a = amplitude_uv * LINE_GAINS[c % 4];
                for (i, v) in ch.samples.iter_mut().enumerate() {
                    *v += a * (std::f64::consts::TAU * freq_hz * i as f64 / ch.fs + phase).sin();
                }
            }
        }
        _ => {}
    }
    out
}

/// Poisson number of movement bumps at uniform onsets; returns the onsets.
fn add_movements(rec: &mut Recording, per_hour: f64, peak: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mean = per_hour * rec.duration_s / 3600.0;
    if !(mean > 0.0) || rec.duration_s < 4.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
    let mut events: Vec<(f64, f64)> = (0..count)
        .map(|_| (rng.random_range(0.0..rec.duration_s - 3.0), rng.random_range(1.0..=3.0)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (c, ch) in rec.channels.iter_mut().enumerate() {
        let a = peak * MOVEMENT_SIGNS[c % 4];
        for &(t0, dur) in &events {
            let i0 = (t0 * ch.fs).ceil() as usize;
            let i1 = (((t0 + dur) * ch.fs) as usize).min(ch.samples.len());
            for i in i0..i1 {
                let phase = (i as f64 / ch.fs - t0) / dur;
                ch.samples[i] += a * (std::f64::consts::PI * phase).sin();
            }
        }
    }
    events.iter().map(|e| e.0).collect()
}

/// Write `<subject>.edf` and `<subject>.<expert>.csv` for every subject.
pub fn write_subjects(dir: &Path, subjects: &[SynthSubject]) -> Result<Vec<PathBuf>, RecordingError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for s in subjects {
        let edf = dir.join(format!("{}.edf", s.recording.subject_id));
        write_edf(&edf, &s.recording)?;
        written.push(edf);
        for t in &s.truth {
            let csv = dir.join(format!("{}.{}.csv", s.recording.subject_id, t.expert_id));
            write_annotations(&csv, t)?;
            written.push(csv);
        }
    }
    Ok(written)
}
