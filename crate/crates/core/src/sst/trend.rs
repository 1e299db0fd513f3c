use super::{Decision, ProbSeries, QsInterval, SstEpoch, SstError, SstTrace};
use crate::dsp::EPOCH_SECONDS;

fn check_weights(weights: Option<&[f64]>, n_channels: usize) -> Result<(), SstError> {
    if let Some(w) = weights {
        if w.len() != n_channels {
            return Err(SstError::InvalidWeights(format!("{} weights for {n_channels} channels", w.len())));
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(SstError::InvalidWeights(format!("weight {bad} is negative or not finite")));
        }
    }
    Ok(())
}

/// Weighted mean over the channels present in each epoch, with the weights
/// renormalized over those channels. `None` when no channel with positive
/// weight is present. Uniform weights by default.
pub fn fuse_channels(probs: &ProbSeries, weights: Option<&[f64]>) -> Result<Vec<Option<f64>>, SstError> {
    probs.validate()?;
    check_weights(weights, probs.channels.len())?;
    Ok(probs
        .rows
        .iter()
        .map(|row| {
            let (mut num, mut den) = (0.0, 0.0);
            for (c, p) in row.iter().enumerate() {
                if let Some(p) = p {
                    let w = weights.map_or(1.0, |w| w[c]);
                    num += w * p;
                    den += w;
                }
            }
            (den > 0.0).then(|| num / den)
        })
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Centered moving median. The window shrinks symmetrically at the ends of
/// the series; missing entries are skipped inside a window and stay missing
/// in the output.
pub fn median_smooth(series: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>, SstError> {
    if window % 2 == 0 {
        return Err(SstError::EvenWindow(window));
    }
    let n = series.len();
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    Ok((0..n)
        .map(|i| {
            series[i]?;
            let h = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend(series[i - h..=i + h].iter().flatten());
            Some(median(&mut buf))
        })
        .collect())
}

/// Fuse, smooth and threshold: `decision` is QS when the smoothed
/// probability reaches `threshold`.
pub fn compute_sst(
    probs: &ProbSeries,
    weights: Option<&[f64]>,
    window: usize,
    threshold: f64,
) -> Result<SstTrace, SstError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SstError::InvalidThreshold(threshold));
    }
    let fused = fuse_channels(probs, weights)?;
    let smoothed = median_smooth(&fused, window)?;
    let epochs = probs
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            let p_mean = fused[k];
            let band = |f: fn(f64, f64) -> f64| p_mean.and_then(|_| present.iter().copied().reduce(f));
            let decision = match smoothed[k] {
                None => Decision::Gap,
                Some(s) if s >= threshold => Decision::Qs,
                Some(_) => Decision::As,
            };
            SstEpoch {
                epoch_index: k,
                t_start_s: k as f64 * EPOCH_SECONDS,
                p_mean,
                p_min: band(f64::min),
                p_max: band(f64::max),
                p_smoothed: smoothed[k],
                decision,
            }
        })
        .collect();
    Ok(SstTrace {
        epoch_len_s: EPOCH_SECONDS,
        threshold,
        epochs,
    })
}

/// Maximal runs of epochs whose smoothed probability reaches `threshold`.
/// Gaps end a run.
pub fn detect_dqs(trace: &SstTrace, threshold: f64) -> Result<Vec<QsInterval>, SstError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SstError::InvalidThreshold(threshold));
    }
    let mut out = Vec::new();
    let mut start = None;
    for (k, e) in trace.epochs.iter().enumerate() {
        let qs = e.p_smoothed.is_some_and(|p| p >= threshold);
        match (qs, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push(QsInterval {
                    start_epoch: s,
                    end_epoch: k,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(QsInterval {
            start_epoch: s,
            end_epoch: trace.epochs.len(),
        });
    }
    Ok(out)
}
