//! Static dual-axis SVG of smoothed mean group reward (left axis) and mean
//! completion length (right axis) against the training step.

use std::fmt::Write;

use thinkguard_core::trainer::telemetry::{default_window, moving_average, StepRecord};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;
const REWARD_COLOR: &str = "#1f77b4";
const LENGTH_COLOR: &str = "#d62728";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlotError {
    #[error("telemetry has no rows")]
    Empty,
    #[error("smoothing window must be positive")]
    ZeroWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub svg: String,
    pub window: usize,
    pub warnings: Vec<String>,
}

/// `[lo, hi]` widened so flat series still get a visible band.
fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-3 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

fn scale(v: f64, (lo, hi): (f64, f64), out_lo: f64, out_hi: f64) -> f64 {
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

pub fn render(records: &[StepRecord], window: Option<usize>) -> Result<Chart, PlotError> {
    if records.is_empty() {
        return Err(PlotError::Empty);
    }
    let n = records.len();
    let window = window.unwrap_or_else(|| default_window(n));
    if window == 0 {
        return Err(PlotError::ZeroWindow);
    }
    let mut warnings = Vec::new();
    if window > n {
        warnings.push(format!(
            "smoothing window {window} exceeds the run length {n}; every point averages from the first step"
        ));
    }
    let steps: Vec<f64> = records.iter().map(|r| r.step as f64).collect();
    let reward = moving_average(&records.iter().map(|r| r.mean_reward).collect::<Vec<_>>(), window);
    let length = moving_average(&records.iter().map(|r| r.mean_len).collect::<Vec<_>>(), window);

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let xr = if n == 1 { (steps[0] - 1.0, steps[0] + 1.0) } else { (steps[0], steps[n - 1]) };
    let rr = range(&reward);
    let lr = range(&length);

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">Mean group reward and completion length (moving average, window {window})</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(w, r#"<rect x="{x0}" y="{y1}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);

    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let y = y0 + f * (y1 - y0);
        let rv = rr.0 + f * (rr.1 - rr.0);
        let lv = lr.0 + f * (lr.1 - lr.0);
        let xv = xr.0 + f * (xr.1 - xr.0);
        let x = x0 + f * (x1 - x0);
        let _ = writeln!(w, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="{REWARD_COLOR}">{rv:.3}</text>"#, x0 - 6.0, y + 4.0);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="start" fill="{LENGTH_COLOR}">{lv:.1}</text>"#, x1 + 6.0, y + 4.0);
        let _ = writeln!(w, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{xv:.0}</text>"#, y0 + 18.0);
    }
    let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#, (x0 + x1) / 2.0, HEIGHT - 14.0);
    let _ = writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" fill="{REWARD_COLOR}" transform="rotate(-90 18 {:.2})">mean group reward</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{LENGTH_COLOR}" transform="rotate(90 {:.2} {:.2})">mean completion length (tokens)</text>"#,
        WIDTH - 18.0,
        (y0 + y1) / 2.0,
        WIDTH - 18.0,
        (y0 + y1) / 2.0
    );

    for (values, r, color, id) in [(&reward, rr, REWARD_COLOR, "reward"), (&length, lr, LENGTH_COLOR, "length")] {
        let points: Vec<String> = steps
            .iter()
            .zip(values.iter())
            .map(|(x, v)| format!("{:.2},{:.2}", scale(*x, xr, x0, x1), scale(*v, r, y0, y1)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline id="{id}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
    }

    let lx = x0 + 12.0;
    for (i, (label, color)) in [("mean group reward (left)", REWARD_COLOR), ("mean completion length (right)", LENGTH_COLOR)]
        .iter()
        .enumerate()
    {
        let ly = y1 + 16.0 + 16.0 * i as f64;
        let _ = writeln!(w, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(w, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, lx + 26.0, ly + 4.0);
    }
    let _ = writeln!(w, "</svg>");
    Ok(Chart { svg: s, window, warnings })
}
