//! Polyphase rational resampling with a Kaiser-windowed sinc low-pass.

use std::f64::consts::PI;

use super::DspError;

/// Half-length of the prototype filter in units of `max(up, down)`.
const HALF_LEN_FACTOR: usize = 20;
/// Kaiser shape parameter; roughly 80 dB stopband.
const KAISER_BETA: f64 = 8.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Reduce `fs_out / fs_in` to a ratio of integers `(up, down)`.
///
/// Rates are treated at millihertz resolution, so e.g. 250 -> 64 Hz gives
/// `(32, 125)`.
pub fn rational_ratio(fs_in: f64, fs_out: f64) -> Result<(usize, usize), DspError> {
    if !(fs_in > 0.0 && fs_out > 0.0) || !fs_in.is_finite() || !fs_out.is_finite() {
        return Err(DspError::InvalidRate { fs_in, fs_out });
    }
    let a = (fs_in * 1000.0).round() as u64;
    let b = (fs_out * 1000.0).round() as u64;
    if a == 0 || b == 0 {
        return Err(DspError::InvalidRate { fs_in, fs_out });
    }
    let g = gcd(a, b);
    Ok(((b / g) as usize, (a / g) as usize))
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Linear-phase low-pass at the upsampled rate, cutoff at the lower of the
/// two Nyquist rates, DC gain `up`.
pub fn lowpass_taps(up: usize, down: usize) -> Vec<f64> {
    let m = up.max(down);
    let half = HALF_LEN_FACTOR * m;
    let n = 2 * half + 1;
    let cutoff = 1.0 / m as f64; // fraction of Nyquist at the upsampled rate
    let denom = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - half as f64;
            let sinc = if t == 0.0 {
                1.0
            } else {
                (PI * cutoff * t).sin() / (PI * cutoff * t)
            };
            let r = t / half as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
            cutoff * sinc * w
        })
        .collect();
    // Normalize to exact DC gain `up` so tone amplitudes survive.
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v *= up as f64 / sum;
    }
    h
}

/// Resample `samples` from `fs_in` to `fs_out`. Output length is
/// `ceil(len * fs_out / fs_in)`; the filter delay is compensated.
pub fn resample(samples: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>, DspError> {
    let (up, down) = rational_ratio(fs_in, fs_out)?;
    if up == down {
        return Ok(samples.to_vec());
    }
    let h = lowpass_taps(up, down);
    let half = (h.len() - 1) / 2;
    let n_in = samples.len();
    let n_out = (n_in * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        // Output k sits at upsampled index k*down; centre the filter there.
        let centre = k * down + half;
        // Input m contributes at upsampled index m*up via tap centre - m*up.
        let m_lo = centre.saturating_sub(h.len() - 1).div_ceil(up);
        let m_hi = (centre / up).min(n_in.saturating_sub(1));
        let mut acc = 0.0;
        if n_in > 0 {
            for m in m_lo..=m_hi {
                acc += samples[m] * h[centre - m * up];
            }
        }
        out.push(acc);
    }
    Ok(out)
}
