//! Standalone SVG line plots with a log₁₀ x axis that runs from large to
//! small values left to right (step size shrinking towards the right).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::config::YScale;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x, y)` pairs; `x > 0`.
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_scale: YScale,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            title: "expansion ratio".into(),
            x_label: "eta".into(),
            y_label: "mean r".into(),
            y_scale: YScale::Log,
        }
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v.round() as i64)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn nice_linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-12 * span {
        out.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    out
}

/// Renders the plot to SVG text.
pub fn render_svg(curves: &[Series], opts: &PlotOptions) -> Result<String> {
    if curves.is_empty() {
        return Err(Error::Contract("plot needs at least one series".into()));
    }
    let log_y = opts.y_scale == YScale::Log;
    for c in curves {
        if c.points.len() < 2 {
            return Err(Error::Contract(format!("series {:?} has fewer than two points", c.name)));
        }
        if c.points.iter().any(|&(x, y)| !(x > 0.0) || !x.is_finite() || !y.is_finite() || (log_y && y <= 0.0)) {
            return Err(Error::Contract(format!(
                "series {:?} has points that cannot be placed on the axes",
                c.name
            )));
        }
    }
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        let (lx, ty) = (x.log10(), if log_y { y.log10() } else { y });
        x_lo = x_lo.min(lx);
        x_hi = x_hi.max(lx);
        y_lo = y_lo.min(ty);
        y_hi = y_hi.max(ty);
    }
    if x_hi == x_lo {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_hi == y_lo {
        let pad = if log_y { 0.5 } else { y_lo.abs().max(1.0) * 0.5 };
        y_lo -= pad;
        y_hi += pad;
    } else {
        let pad = 0.05 * (y_hi - y_lo);
        y_lo -= pad;
        y_hi += pad;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    // largest x on the left
    let px = |x: f64| LEFT + (x_hi - x.log10()) / (x_hi - x_lo) * plot_w;
    let py_t = |t: f64| TOP + (y_hi - t) / (y_hi - y_lo) * plot_h;
    let py = |y: f64| py_t(if log_y { y.log10() } else { y });

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&opts.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    // x ticks at every decade
    let mut d = x_lo.ceil() as i64;
    while d as f64 <= x_hi.floor() {
        let x = px(10f64.powi(d as i32));
        let _ = writeln!(
            s,
            r#"<line class="xtick" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + plot_h + 20.0,
            tick_label(d as f64, true)
        );
        d += 1;
    }
    let y_ticks: Vec<f64> = if log_y {
        (y_lo.ceil() as i64..=y_hi.floor() as i64).map(|v| v as f64).collect()
    } else {
        nice_linear_ticks(y_lo, y_hi)
    };
    for t in y_ticks {
        let y = py_t(t);
        let _ = writeln!(
            s,
            r#"<line class="ytick" x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            tick_label(t, log_y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0,
        escape(&format!("{} (log scale, decreasing)", opts.x_label))
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(&format!("{}{}", opts.y_label, if log_y { " (log scale)" } else { "" }))
    );

    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot_svg(curves: &[Series], opts: &PlotOptions, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_svg(curves, opts)?).map_err(|e| Error::io(path, e))
}
