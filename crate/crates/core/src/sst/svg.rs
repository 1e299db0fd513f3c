//! Deterministic SVG rendering of the trend, modelled on a bedside display:
//! aEEG band on top, SST with its uncertainty band in the middle, DQS and
//! expert bars underneath.

use std::fmt::Write;

use super::aeeg::{aeeg_display_y, AeegBand};
use super::{Decision, QsInterval, SstTrace};
use crate::recording::Interval;

pub const SVG_PX_PER_HOUR: f64 = 40.0;
pub const SVG_HEIGHT: f64 = 300.0;

const LEFT: f64 = 50.0;
const RIGHT: f64 = 10.0;
const AEEG_TOP: f64 = 10.0;
const AEEG_BOTTOM: f64 = 80.0;
const SST_TOP: f64 = 95.0;
const SST_BOTTOM: f64 = 215.0;
const BAR_TOP: f64 = 228.0;
const BAR_HEIGHT: f64 = 10.0;
const BAR_STEP: f64 = 14.0;

/// Reference intervals drawn as a labelled bar row (one row per expert).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub label: String,
    pub intervals: Vec<Interval>,
}

fn x_of(t_s: f64) -> f64 {
    LEFT + t_s / 3600.0 * SVG_PX_PER_HOUR
}

fn y_prob(p: f64) -> f64 {
    SST_BOTTOM - p.clamp(0.0, 1.0) * (SST_BOTTOM - SST_TOP)
}

fn y_aeeg(uv: f64) -> f64 {
    AEEG_BOTTOM - aeeg_display_y(uv) * (AEEG_BOTTOM - AEEG_TOP)
}

/// Indices of maximal runs of non-gap epochs.
fn runs(trace: &SstTrace) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (k, e) in trace.epochs.iter().enumerate() {
        match (e.decision == Decision::Gap, start) {
            (false, None) => start = Some(k),
            (true, Some(s)) => {
                out.push(s..k);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..trace.epochs.len());
    }
    out
}

fn bar(svg: &mut String, class: &str, y: f64, start_s: f64, end_s: f64) {
    let (x0, x1) = (x_of(start_s), x_of(end_s));
    let _ = writeln!(
        svg,
        r#"<rect class="{class}" x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{BAR_HEIGHT:.2}"/>"#,
        x1 - x0
    );
}

/// Render the trend. Values are plotted at epoch centres; each run of
/// non-gap epochs becomes its own path so artifact gaps show as breaks.
/// The band is drawn only when it has non-zero width somewhere.
pub fn render_svg(
    trace: &SstTrace,
    dqs: &[QsInterval],
    annotations: &[AnnotationRow],
    aeeg: Option<&[AeegBand]>,
) -> String {
    let epoch = trace.epoch_len_s;
    let duration_s = trace.epochs.len() as f64 * epoch;
    let plot_w = duration_s / 3600.0 * SVG_PX_PER_HOUR;
    let width = LEFT + plot_w + RIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.2}" height="{SVG_HEIGHT:.0}" viewBox="0 0 {width:.2} {SVG_HEIGHT:.0}">"#
    );
    svg.push_str(
        "<style>.axis{stroke:#000;stroke-width:1;fill:none}.sst-line{stroke:#000;stroke-width:1.2;fill:none}\
         .sst-band{fill:#bbb;stroke:none}.threshold{stroke:#000;stroke-dasharray:3 3;fill:none}\
         .aeeg{fill:#6a8caf;stroke:none}.dqs{fill:#000}.expert{fill:#888}\
         text{font-family:sans-serif;font-size:9px}</style>\n",
    );

    // Axes.
    let x_end = LEFT + plot_w;
    for (top, bottom) in [(AEEG_TOP, AEEG_BOTTOM), (SST_TOP, SST_BOTTOM)] {
        let _ = writeln!(
            svg,
            r#"<path class="axis" d="M {LEFT:.2} {top:.2} L {LEFT:.2} {bottom:.2} L {x_end:.2} {bottom:.2}"/>"#
        );
    }
    let _ = writeln!(svg, r#"<text x="2" y="{:.2}">aEEG</text>"#, AEEG_TOP + 8.0);
    for uv in [5.0, 10.0, 25.0, 50.0, 100.0] {
        let _ = writeln!(svg, r#"<text x="28" y="{:.2}">{uv}</text>"#, y_aeeg(uv) + 3.0);
    }
    let _ = writeln!(svg, r#"<text x="2" y="{:.2}">SST</text>"#, SST_TOP + 8.0);
    for p in [0.0, 0.5, 1.0] {
        let _ = writeln!(svg, r#"<text x="30" y="{:.2}">{p:.1}</text>"#, y_prob(p) + 3.0);
    }
    let hours = (duration_s / 3600.0).floor() as usize;
    for h in 0..=hours {
        let x = x_of(h as f64 * 3600.0);
        let _ = writeln!(
            svg,
            r#"<path class="axis" d="M {x:.2} {SST_BOTTOM:.2} L {x:.2} {:.2}"/><text x="{:.2}" y="{:.2}">{h}h</text>"#,
            SST_BOTTOM + 3.0,
            x - 4.0,
            SVG_HEIGHT - 4.0
        );
    }

    // aEEG band.
    if let Some(bands) = aeeg {
        for (k, b) in bands.iter().enumerate() {
            let x0 = x_of(k as f64 * epoch);
            let (y0, y1) = (y_aeeg(b.upper), y_aeeg(b.lower));
            let _ = writeln!(
                svg,
                r#"<rect class="aeeg" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#,
                x_of(epoch) - LEFT,
                (y1 - y0).max(0.5)
            );
        }
    }

    // Threshold.
    let yt = y_prob(trace.threshold);
    let _ = writeln!(svg, r#"<path class="threshold" d="M {LEFT:.2} {yt:.2} L {x_end:.2} {yt:.2}"/>"#);

    // Uncertainty band and SST line, one path per run.
    let has_band = trace
        .epochs
        .iter()
        .any(|e| matches!((e.p_min, e.p_max), (Some(a), Some(b)) if b > a));
    let centre = |k: usize| x_of((k as f64 + 0.5) * epoch);
    for run in runs(trace) {
        let es = &trace.epochs[run.clone()];
        if has_band {
            let mut d = String::new();
            for (k, e) in run.clone().zip(es) {
                let _ = write!(d, "{} {:.2} {:.2} ", if d.is_empty() { "M" } else { "L" }, centre(k), y_prob(e.p_max.unwrap_or(0.0)));
            }
            for (k, e) in run.clone().zip(es).rev() {
                let _ = write!(d, "L {:.2} {:.2} ", centre(k), y_prob(e.p_min.unwrap_or(0.0)));
            }
            let _ = writeln!(svg, r#"<path class="sst-band" d="{}Z"/>"#, d);
        }
        let mut d = String::new();
        for (k, e) in run.clone().zip(es) {
            let _ = write!(
                d,
                "{}{} {:.2} {:.2}",
                if d.is_empty() { "" } else { " " },
                if d.is_empty() { "M" } else { "L" },
                centre(k),
                y_prob(e.p_smoothed.unwrap_or(0.0))
            );
        }
        let _ = writeln!(svg, r#"<path class="sst-line" d="{d}"/>"#);
    }

    // DQS and expert bars.
    let _ = writeln!(svg, r#"<text x="2" y="{:.2}">DQS</text>"#, BAR_TOP + 8.0);
    for iv in dqs {
        bar(&mut svg, "dqs", BAR_TOP, iv.start_epoch as f64 * epoch, iv.end_epoch as f64 * epoch);
    }
    for (r, row) in annotations.iter().enumerate() {
        let y = BAR_TOP + BAR_STEP * (r + 1) as f64;
        let _ = writeln!(svg, r#"<text x="2" y="{:.2}">{}</text>"#, y + 8.0, escape(&row.label));
        for iv in &row.intervals {
            bar(&mut svg, "expert", y, iv.onset_s, iv.end_s());
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
