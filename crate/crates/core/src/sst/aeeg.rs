//! Amplitude-integrated EEG companion trend.

use crate::dsp::{design_butter_bandpass, filter_zero_phase, DspError, EPOCH_FS, EPOCH_LEN};

pub const AEEG_LOW_HZ: f64 = 2.0;
pub const AEEG_HIGH_HZ: f64 = 15.0;
/// Length of the moving average applied after rectification.
pub const AEEG_SMOOTH_S: f64 = 0.5;
const AEEG_ORDER: usize = 4;

/// 10th and 90th percentile of the smoothed rectified signal in one epoch,
/// in microvolts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeegBand {
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolation percentile (`q` in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Centered moving average; the window is truncated at the edges.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let before = width / 2;
    let after = width - 1 - before;
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(before);
            let b = (i + after + 1).min(n);
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// Per-epoch aEEG band of a 64 Hz signal: 2-15 Hz zero-phase band-pass,
/// full-wave rectification, 0.5 s moving average, then the 10th/90th
/// percentiles of each complete minute.
pub fn compute_aeeg(samples_64hz: &[f64]) -> Result<Vec<AeegBand>, DspError> {
    if samples_64hz.len() < EPOCH_LEN {
        return Ok(Vec::new());
    }
    let spec = design_butter_bandpass(AEEG_ORDER, AEEG_LOW_HZ, AEEG_HIGH_HZ, EPOCH_FS)?;
    let filtered = filter_zero_phase(samples_64hz, &spec)?;
    let rectified: Vec<f64> = filtered.iter().map(|v| v.abs()).collect();
    let smooth = moving_average(&rectified, (AEEG_SMOOTH_S * EPOCH_FS).round() as usize);
    Ok(smooth
        .chunks_exact(EPOCH_LEN)
        .map(|c| AeegBand {
            lower: percentile(c, 10.0),
            upper: percentile(c, 90.0),
        })
        .collect())
}

/// Position on the semilogarithmic aEEG axis as a fraction of its height:
/// linear from 0 to 10 uV over the lower half, logarithmic from 10 to
/// 100 uV over the upper half. Clamped to [0, 1].
pub fn aeeg_display_y(uv: f64) -> f64 {
    if uv <= 10.0 {
        0.5 * uv.max(0.0) / 10.0
    } else {
        (0.5 + 0.5 * (uv / 10.0).log10()).min(1.0)
    }
}
