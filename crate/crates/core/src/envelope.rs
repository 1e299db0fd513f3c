//! Amplitude-envelope comparator: Hilbert envelope of the 1-30 Hz band,
//! per-minute mean/std features and their agreement with the SST.

use std::path::Path;

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{design_butter_bandpass, filter_zero_phase, DspError, EPOCH_SECONDS};
use crate::metrics::{pearson, roc_auc, MetricsError};
use crate::sst::SstTrace;

pub const ENVELOPE_LOW_HZ: f64 = 1.0;
pub const ENVELOPE_HIGH_HZ: f64 = 30.0;
const ENVELOPE_ORDER: usize = 4;
const MIN_LEN: usize = 64;
/// Mirror padding around the channel. The filter's own edge padding
/// is too short for the 1 Hz corner to settle, and the pads also keep the
/// analytic signal's circular wrap away from real samples.
const EDGE_PAD_S: f64 = 4.0;

/// Analytic signal by the frequency-domain construction: keep DC (and
/// Nyquist for even lengths), double positive frequencies, zero negative
/// ones.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= gain / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Magnitude of the analytic signal of `x` (no filtering).
pub fn hilbert_envelope(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).iter().map(|z| z.norm()).collect()
}

/// Envelope of `samples` after a zero-phase 1-30 Hz band-pass.
pub fn analytic_envelope(samples: &[f64], fs: f64) -> Result<Vec<f64>, DspError> {
    if samples.len() < MIN_LEN {
        return Err(DspError::TooShort {
            len: samples.len(),
            min: MIN_LEN,
        });
    }
    let spec = design_butter_bandpass(ENVELOPE_ORDER, ENVELOPE_LOW_HZ, ENVELOPE_HIGH_HZ, fs)?;
    let n = samples.len();
    let pad = ((EDGE_PAD_S * fs) as usize).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| samples[k]));
    ext.extend_from_slice(samples);
    ext.extend((1..=pad).map(|k| samples[n - 1 - k]));
    let mut filtered = filter_zero_phase(&ext, &spec)?;
    // Raised-cosine taper over the pads so the FFT's circular wrap is smooth.
    for k in 0..pad {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / pad as f64).cos();
        filtered[k] *= w;
        let j = filtered.len() - 1 - k;
        filtered[j] *= w;
    }
    let env = hilbert_envelope(&filtered);
    Ok(env[pad..pad + n].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFeatures {
    pub env_mean: f64,
    /// Population standard deviation.
    pub env_std: f64,
}

/// Mean and standard deviation of an already computed envelope over each
/// complete minute; a trailing partial minute is dropped.
pub fn epoch_features(envelope: &[f64], fs: f64) -> Vec<EnvelopeFeatures> {
    let per = (EPOCH_SECONDS * fs).round() as usize;
    if per == 0 {
        return Vec::new();
    }
    envelope
        .chunks_exact(per)
        .map(|c| {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            EnvelopeFeatures {
                env_mean: mean,
                env_std: var.sqrt(),
            }
        })
        .collect()
}

/// Envelope of the whole channel, then per-minute features.
pub fn envelope_features(samples: &[f64], fs: f64) -> Result<Vec<EnvelopeFeatures>, DspError> {
    Ok(epoch_features(&analytic_envelope(samples, fs)?, fs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SstComparison {
    pub pearson_mean: f64,
    pub pearson_std: f64,
    pub roc_mean: f64,
    pub roc_std: f64,
    /// Epochs used: those with an SST value and a QS/AS reference label.
    pub n_epochs: usize,
}

/// Correlate each feature with the SST mean probability and score it as a
/// QS detector against `truth` (`None` = unscored). Epochs without an SST
/// value or a reference label are skipped.
pub fn compare_to_sst(
    features: &[EnvelopeFeatures],
    trace: &SstTrace,
    truth: &[Option<bool>],
) -> Result<SstComparison, MetricsError> {
    let n = features.len();
    if trace.epochs.len() != n {
        return Err(MetricsError::LengthMismatch(n, trace.epochs.len()));
    }
    if truth.len() != n {
        return Err(MetricsError::LengthMismatch(n, truth.len()));
    }
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut sst = Vec::new();
    let mut labels = Vec::new();
    for ((f, e), t) in features.iter().zip(&trace.epochs).zip(truth) {
        if let (Some(p), Some(t)) = (e.p_mean, t) {
            means.push(f.env_mean);
            stds.push(f.env_std);
            sst.push(p);
            labels.push(*t);
        }
    }
    Ok(SstComparison {
        pearson_mean: pearson(&means, &sst)?,
        pearson_std: pearson(&stds, &sst)?,
        roc_mean: roc_auc(&means, &labels)?.auc,
        roc_std: roc_auc(&stds, &labels)?.auc,
        n_epochs: labels.len(),
    })
}

/// `epoch_index,env_mean_uv,env_std_uv`.
pub fn write_features_csv(path: &Path, features: &[EnvelopeFeatures]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch_index", "env_mean_uv", "env_std_uv"])?;
    for (k, f) in features.iter().enumerate() {
        w.write_record([k.to_string(), format!("{:.6}", f.env_mean), format!("{:.6}", f.env_std)])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sst::{compute_sst, ProbSeries};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const FS: f64 = 64.0;

    fn tone(parts: &[(f64, f64)], seconds: f64) -> Vec<f64> {
        (0..(seconds * FS) as usize)
            .map(|i| {
                let t = i as f64 / FS;
                parts.iter().map(|(a, f)| a * (2.0 * PI * f * t).sin()).sum()
            })
            .collect()
    }

    fn interior(x: &[f64]) -> &[f64] {
        &x[FS as usize..x.len() - FS as usize]
    }

    #[test]
    fn pure_tone_envelope() {
        let env = analytic_envelope(&tone(&[(5.0, 10.0)], 60.0), FS).unwrap();
        for v in interior(&env) {
            assert!((v - 5.0).abs() < 0.02 * 5.0, "{v}");
        }
    }

    #[test]
    fn zero_signal_has_zero_envelope() {
        assert!(analytic_envelope(&[0.0; 4000], FS).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beat_envelope_extremes() {
        let env = analytic_envelope(&tone(&[(3.0, 8.0), (4.0, 12.0)], 60.0), FS).unwrap();
        let inner = interior(&env);
        let max = inner.iter().cloned().fold(f64::MIN, f64::max);
        let min = inner.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 7.0).abs() < 0.02 * 7.0, "{max}");
        assert!((min - 1.0).abs() < 0.1, "{min}");
    }

    #[test]
    fn too_short() {
        assert!(matches!(analytic_envelope(&[1.0; 10], FS), Err(DspError::TooShort { .. })));
    }

    #[test]
    fn constant_tone_has_flat_features() {
        let f = envelope_features(&tone(&[(5.0, 10.0)], 300.0), FS).unwrap();
        assert_eq!(f.len(), 5);
        for x in &f[1..4] {
            assert!(x.env_std < 0.05, "{x:?}");
        }
    }

    #[test]
    fn square_modulated_tone_mean() {
        // 10 Hz carrier, amplitude 2 or 10 uV alternating every 5 s.
        let x: Vec<f64> = (0..(180.0 * FS) as usize)
            .map(|i| {
                let t = i as f64 / FS;
                let a = if (t / 5.0).floor() as usize % 2 == 0 { 2.0 } else { 10.0 };
                a * (2.0 * PI * 10.0 * t).sin()
            })
            .collect();
        let f = envelope_features(&x, FS).unwrap();
        assert!((f[1].env_mean - 6.0).abs() < 0.2, "{:?}", f[1]);
    }

    #[test]
    fn trailing_partial_minute_dropped() {
        assert_eq!(epoch_features(&vec![1.0; (150.0 * FS) as usize], FS).len(), 2);
    }

    #[test]
    fn doubling_amplitude_doubles_mean() {
        let x = tone(&[(3.0, 8.0), (1.0, 3.0)], 120.0);
        let a = envelope_features(&x, FS).unwrap();
        let b = envelope_features(&x.iter().map(|v| 2.0 * v).collect::<Vec<_>>(), FS).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((2.0 * p.env_mean - q.env_mean).abs() < 1e-9 * q.env_mean.max(1.0));
        }
    }

    fn trace_from(p: &[f64]) -> SstTrace {
        let probs = ProbSeries {
            channels: vec!["c".into()],
            rows: p.iter().map(|v| vec![Some(*v)]).collect(),
        };
        compute_sst(&probs, None, 5, 0.5).unwrap()
    }

    #[test]
    fn affine_features_correlate_perfectly() {
        let p: Vec<f64> = (0..50).map(|k| ((k * 37) % 50) as f64 / 50.0).collect();
        let feats: Vec<EnvelopeFeatures> = p
            .iter()
            .map(|v| EnvelopeFeatures {
                env_mean: 3.0 * v + 1.0,
                env_std: 2.0 - v,
            })
            .collect();
        let truth: Vec<Option<bool>> = p.iter().map(|v| Some(*v > 0.5)).collect();
        let c = compare_to_sst(&feats, &trace_from(&p), &truth).unwrap();
        assert!((c.pearson_mean - 1.0).abs() < 1e-12);
        assert!((c.pearson_std + 1.0).abs() < 1e-12);
        assert_eq!(c.roc_mean, 1.0);
        assert_eq!(c.roc_std, 0.0);
    }

    #[test]
    fn shuffled_features_are_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 1000;
        let truth: Vec<Option<bool>> = (0..n).map(|k| Some(k % 4 == 0)).collect();
        let mut feats: Vec<EnvelopeFeatures> = truth
            .iter()
            .map(|t| EnvelopeFeatures {
                env_mean: if t.unwrap() { 30.0 } else { 10.0 } + rng.random_range(0.0..5.0),
                env_std: rng.random_range(0.0..5.0),
            })
            .collect();
        feats.shuffle(&mut rng);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = compare_to_sst(&feats, &trace_from(&p), &truth).unwrap();
        assert!((c.roc_mean - 0.5).abs() < 0.05, "{}", c.roc_mean);
    }

    #[test]
    fn misaligned_lengths() {
        let f = vec![
            EnvelopeFeatures {
                env_mean: 1.0,
                env_std: 0.0
            };
            3
        ];
        assert!(matches!(
            compare_to_sst(&f, &trace_from(&[0.5, 0.5]), &[Some(true); 3]),
            Err(MetricsError::LengthMismatch(3, 2))
        ));
    }

    proptest! {
        #[test]
        fn envelope_bounds_signal(x in prop::collection::vec(-100.0f64..100.0, 1..300)) {
            let env = hilbert_envelope(&x);
            let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            for (e, v) in env.iter().zip(&x) {
                prop_assert!(*e >= v.abs() - 1e-9 * scale);
            }
        }

        #[test]
        fn envelope_scales(x in prop::collection::vec(-100.0f64..100.0, 64..300), c in 0.01f64..50.0) {
            let a = hilbert_envelope(&x);
            let b = hilbert_envelope(&x.iter().map(|v| c * v).collect::<Vec<_>>());
            let scale = a.iter().fold(1.0f64, |m, v| m.max(*v));
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((c * p - q).abs() <= 1e-9 * c * scale);
            }
        }
    }
}
