//! Butterworth band-pass design as cascaded second-order sections, plus
//! causal and forward-backward (zero-phase) application.
//!
//! `order` is the analog low-pass prototype order. The band-pass transform
//! doubles it, so order 4 yields 8 poles in 4 sections, with -3 dB at both
//! band edges for a single pass.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

/// One biquad in transposed direct form II, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// State after settling on a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * y;
        let z1 = self.b[1] - self.a[1] * y + z2;
        [z1, z2]
    }

    fn run(&self, data: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in data.iter_mut() {
            let x = *v;
            let y = b0 * x + state[0];
            state[0] = b1 * x - a1 * y + state[1];
            state[1] = b2 * x - a2 * y;
            *v = y;
        }
    }

    /// Pole radii of this section.
    pub fn pole_magnitudes(&self) -> [f64; 2] {
        let [_, a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        let p1 = (-a1 + disc) / 2.0;
        let p2 = (-a1 - disc) / 2.0;
        [p1.norm(), p2.norm()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    ButterBandpass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
    pub sections: Vec<Biquad>,
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    (2.0 * fs + s) / (2.0 * fs - s)
}

/// Design a Butterworth band-pass filter.
pub fn design_butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<FilterSpec, DspError> {
    if !(fs > 2.0 * high_hz) {
        return Err(DspError::NyquistViolation { high_hz, fs });
    }
    if order == 0 || !(low_hz > 0.0) || !(low_hz < high_hz) {
        return Err(DspError::InvalidFilter(format!(
            "order {order}, band {low_hz}..{high_hz} Hz"
        )));
    }

    // Pre-warped analog band edges.
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (wl, wh) = (warp(low_hz), warp(high_hz));
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let mut sections = Vec::with_capacity(order);
    let push_pair = |p: Complex64| {
        // Each prototype pole p maps to the roots of s^2 - p*bw*s + w0^2.
        let half = p * bw / 2.0;
        let disc = (half * half - w0_sq).sqrt();
        [half + disc, half - disc]
    };
    for k in 0..order / 2 {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        for s in push_pair(p) {
            let z = bilinear(s, fs);
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * z.re, z.norm_sqr()],
            });
        }
    }
    if order % 2 == 1 {
        // Real prototype pole at -1 gives one section whose two poles are
        // either a conjugate pair or both real.
        let [s1, s2] = push_pair(Complex64::new(-1.0, 0.0));
        let (z1, z2) = (bilinear(s1, fs), bilinear(s2, fs));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(z1 + z2).re, (z1 * z2).re],
        });
    }

    // Unit gain at the (digital) geometric centre frequency.
    let wc = 2.0 * (w0_sq.sqrt() / (2.0 * fs)).atan();
    let z_inv = Complex64::from_polar(1.0, -wc);
    let g: f64 = sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm();
    let per_section = g.powf(-1.0 / sections.len() as f64);
    for s in &mut sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }

    Ok(FilterSpec {
        kind: FilterKind::ButterBandpass,
        order,
        low_hz,
        high_hz,
        fs,
        sections,
    })
}

impl FilterSpec {
    /// Single-pass magnitude response at `f_hz`.
    pub fn magnitude(&self, f_hz: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / self.fs);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .product::<Complex64>()
            .norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.pole_magnitudes().iter().all(|&m| m < 1.0))
    }

    /// Edge padding used by [`filter_zero_phase`].
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Per-section steady-state for a unit step, scaled by the DC gain of the
    /// sections upstream of it.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let st = [z1 * scale, z2 * scale];
                scale *= s.dc_gain();
                st
            })
            .collect()
    }

    fn run_cascade(&self, data: &mut [f64], states: &[[f64; 2]], x0: f64) {
        for (s, st) in self.sections.iter().zip(states) {
            s.run(data, [st[0] * x0, st[1] * x0]);
        }
    }
}

/// Single forward pass from rest. Suitable for streaming use.
pub fn filter_causal(samples: &[f64], spec: &FilterSpec) -> Vec<f64> {
    let mut out = samples.to_vec();
    for s in &spec.sections {
        s.run(&mut out, [0.0, 0.0]);
    }
    out
}

/// Forward-backward filtering with odd-reflection padding and steady-state
/// initial conditions. Output has zero phase and squared magnitude response.
pub fn filter_zero_phase(samples: &[f64], spec: &FilterSpec) -> Result<Vec<f64>, DspError> {
    let n = samples.len();
    let pad = spec.pad_len();
    if n <= pad {
        return Err(DspError::TooShort { len: n, min: pad + 1 });
    }
    let first = samples[0];
    let last = samples[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - samples[i]));
    ext.extend_from_slice(samples);
    ext.extend((1..=pad).map(|i| 2.0 * last - samples[n - 1 - i]));

    let states = spec.step_states();
    let x0 = ext[0];
    spec.run_cascade(&mut ext, &states, x0);
    ext.reverse();
    let y0 = ext[0];
    spec.run_cascade(&mut ext, &states, y0);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form analog Butterworth band-pass magnitude at the pre-warped
    /// frequency; independent of the section realization.
    fn analog_oracle(order: usize, low: f64, high: f64, fs: f64, f: f64) -> f64 {
        let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
        let (wl, wh, w) = (warp(low), warp(high), warp(f));
        let omega = (w * w - wl * wh) / (w * (wh - wl));
        1.0 / (1.0 + omega.abs().powi(2 * order as i32)).sqrt()
    }

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    #[test]
    fn matches_frequency_sweep_oracle() {
        for &(order, lo, hi, fs) in &[(4, 0.5, 30.0, 256.0), (4, 1.0, 30.0, 64.0), (3, 2.0, 15.0, 64.0), (1, 1.0, 10.0, 100.0)] {
            let f = design_butter_bandpass(order, lo, hi, fs).unwrap();
            assert_eq!(f.sections.len(), order);
            assert!(f.is_stable());
            for i in 1..200 {
                let hz = i as f64 * (fs / 2.0) / 200.0;
                let got = f.magnitude(hz);
                let want = analog_oracle(order, lo, hi, fs, hz);
                assert!((got - want).abs() < 1e-9, "order {order} f {hz}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn reference_filter_points() {
        let f = design_butter_bandpass(4, 0.5, 30.0, 256.0).unwrap();
        assert!((f.magnitude(10.0) - 1.0).abs() < 0.01);
        assert_eq!(f.magnitude(0.0), 0.0);
        assert!((db(f.magnitude(0.5)) + 3.0103).abs() < 0.5);
        assert!((db(f.magnitude(30.0)) + 3.0103).abs() < 0.5);
    }

    #[test]
    fn stopbands_are_monotone() {
        let f = design_butter_bandpass(4, 0.5, 30.0, 256.0).unwrap();
        let mut prev = 0.0;
        for i in 0..=50 {
            let m = f.magnitude(0.5 * i as f64 / 50.0);
            assert!(m >= prev);
            prev = m;
        }
        let mut prev = f64::INFINITY;
        for i in 0..=98 {
            let m = f.magnitude(30.0 + i as f64);
            assert!(m <= prev);
            prev = m;
        }
    }

    #[test]
    fn nyquist_violation() {
        assert!(matches!(
            design_butter_bandpass(4, 0.5, 30.0, 60.0),
            Err(DspError::NyquistViolation { .. })
        ));
    }

    fn sine(f: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs + phase).sin()).collect()
    }

    #[test]
    fn zero_phase_sine_has_no_lag_and_squared_gain() {
        let fs = 256.0;
        let spec = design_butter_bandpass(4, 0.5, 30.0, fs).unwrap();
        let x = sine(10.0, fs, 256 * 60, 0.3);
        let y = filter_zero_phase(&x, &spec).unwrap();
        let interior = 256 * 10..256 * 50;
        // Cross-correlation lag oracle over +/- 12 samples.
        let xc = |lag: i64| -> f64 {
            interior
                .clone()
                .map(|i| x[i] * y[(i as i64 + lag) as usize])
                .sum()
        };
        let best = (-12..=12).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let ratio = rms(&y[interior.clone()]) / rms(&x[interior]);
        let want = spec.magnitude(10.0).powi(2);
        assert!((ratio - want).abs() < 1e-3, "{ratio} vs {want}");
    }

    #[test]
    fn causal_sine_lags() {
        let fs = 256.0;
        let spec = design_butter_bandpass(4, 0.5, 30.0, fs).unwrap();
        let x = sine(10.0, fs, 256 * 30, 0.0);
        let y = filter_causal(&x, &spec);
        let xc = |lag: usize| -> f64 { (2560..5120).map(|i| x[i] * y[i + lag]).sum() };
        let best = (0..25).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert!(best > 0);
    }

    #[test]
    fn dc_is_removed() {
        let spec = design_butter_bandpass(4, 0.5, 30.0, 256.0).unwrap();
        let x = vec![42.0; 256 * 60];
        let y = filter_zero_phase(&x, &spec).unwrap();
        let edge = 256 * 10;
        let worst = y[edge..y.len() - edge].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 42.0 * 1e-6, "{worst}");
    }

    #[test]
    fn time_reversal_symmetry() {
        let spec = design_butter_bandpass(4, 0.5, 30.0, 256.0).unwrap();
        let x: Vec<f64> = (0..256 * 40)
            .map(|i| (i as f64 * 0.05).sin() * 20.0 + (i as f64 * 0.61).cos() * 7.0 + (i % 97) as f64 * 0.1)
            .collect();
        let mut xr = x.clone();
        xr.reverse();
        let mut yr = filter_zero_phase(&xr, &spec).unwrap();
        yr.reverse();
        let y = filter_zero_phase(&x, &spec).unwrap();
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let edge = 256 * 12;
        for i in edge..x.len() - edge {
            assert!((y[i] - yr[i]).abs() < 1e-6 * scale, "at {i}: {} vs {}", y[i], yr[i]);
        }
    }

    #[test]
    fn too_short() {
        let spec = design_butter_bandpass(4, 0.5, 30.0, 256.0).unwrap();
        assert!(matches!(
            filter_zero_phase(&[1.0; 27], &spec),
            Err(DspError::TooShort { len: 27, min: 28 })
        ));
        assert!(filter_zero_phase(&[1.0; 28], &spec).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn zero_phase_is_linear(
                xs in prop::collection::vec(-100.0f64..100.0, 64..400),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
            ) {
                let spec = design_butter_bandpass(4, 0.5, 30.0, 256.0).unwrap();
                let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v * 0.3 + (i as f64 * 0.2).sin() * 50.0).collect();
                let mix: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
                let fx = filter_zero_phase(&xs, &spec).unwrap();
                let fy = filter_zero_phase(&ys, &spec).unwrap();
                let fm = filter_zero_phase(&mix, &spec).unwrap();
                let scale = fm.iter().chain(&fx).chain(&fy).fold(1e-12f64, |m, v| m.max(v.abs()));
                for i in 0..xs.len() {
                    let lin = a * fx[i] + b * fy[i];
                    prop_assert!((fm[i] - lin).abs() <= 1e-9 * scale.max(1.0));
                }
            }
        }
    }
}
