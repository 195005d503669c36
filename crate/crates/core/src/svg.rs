//! Minimal SVG chart writer for run artifacts.
//!
//! Two chart kinds cover everything the pipeline emits: a line chart with
//! optional ±whiskers (few-shot accuracy curves, loss traces) and a
//! labeled scatter plot (2-D projections). Output is plain SVG text with
//! no external assets, so artifacts diff cleanly and render anywhere.

use crate::error::{Result, SfeError};
use std::fmt::Write as _;

/// Fill/stroke cycle for series and label classes.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
/// Color for unlabeled scatter points.
const UNLABELED: &str = "#888888";

const MARGIN_LEFT: f64 = 66.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 54.0;
const TICK_TARGET: usize = 5;

/// Canvas size and text furniture shared by both chart kinds.
#[derive(Clone, Debug)]
pub struct ChartOptions {
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions {
            width: 800,
            height: 500,
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
        }
    }
}

/// One polyline on a line chart. `whiskers[i]` (when present) draws a
/// vertical bar of half-length `whiskers[i]` through `points[i]`,
/// typically ±1 standard deviation.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub whiskers: Option<Vec<f64>>,
}

/// One point of a labeled scatter plot; `label: None` renders gray.
#[derive(Clone, Debug)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: Option<String>,
}

/// Escapes the five XML-special characters for use in text nodes and
/// attribute values.
fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Rounds `raw` up to the nearest "nice" step (1, 2 or 5 times a power
/// of ten), the classic axis-labeling heuristic.
fn nice_step(raw: f64) -> f64 {
    let exp = raw.log10().floor();
    let base = 10f64.powi(exp as i32);
    let frac = raw / base;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * base
}

/// Tick positions covering `[lo, hi]` at a nice step, plus the number of
/// decimals needed to print them without truncation.
fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let step = nice_step((hi - lo) / TICK_TARGET as f64);
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize } .min(6);
    let mut t = Vec::new();
    let mut v = (lo / step).ceil() * step;
    // Guard against -0.0 and accumulate multiplicatively to avoid drift.
    let first = (lo / step).ceil() as i64;
    let mut i = first;
    while v <= hi + step * 1e-9 {
        t.push(if v == 0.0 { 0.0 } else { v });
        i += 1;
        v = i as f64 * step;
    }
    (t, decimals)
}

fn fmt_tick(v: f64, decimals: usize) -> String {
    // Large or tiny magnitudes fall back to exponent notation so labels
    // stay short.
    if v != 0.0 && (v.abs() >= 1e6 || v.abs() < 1e-4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.decimals$}")
    }
}

/// Data range padded by 5% on each side; a degenerate (single-value)
/// range is widened so the point sits mid-axis.
fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        let half = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        return (lo - half, hi + half);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Affine map from data space to pixel space for one axis.
struct AxisMap {
    lo: f64,
    scale: f64,
    offset: f64,
}

impl AxisMap {
    fn new(lo: f64, hi: f64, pix_start: f64, pix_len: f64, flip: bool) -> AxisMap {
        let scale = pix_len / (hi - lo);
        if flip {
            AxisMap { lo, scale: -scale, offset: pix_start + pix_len }
        } else {
            AxisMap { lo, scale, offset: pix_start }
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.offset + (v - self.lo) * self.scale
    }
}

struct Frame {
    x: AxisMap,
    y: AxisMap,
    plot_left: f64,
    plot_top: f64,
    plot_w: f64,
}

/// Emits the SVG header, background, axes, gridlines, tick labels,
/// title and axis labels; returns the data-to-pixel mapping.
fn frame(
    svg: &mut String,
    opts: &ChartOptions,
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> Frame {
    let w = opts.width as f64;
    let h = opts.height as f64;
    let plot_left = MARGIN_LEFT;
    let plot_top = MARGIN_TOP;
    let plot_w = w - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = h - MARGIN_TOP - MARGIN_BOTTOM;
    let (x_lo, x_hi) = padded_range(x_range.0, x_range.1);
    let (y_lo, y_hi) = padded_range(y_range.0, y_range.1);
    let x = AxisMap::new(x_lo, x_hi, plot_left, plot_w, false);
    let y = AxisMap::new(y_lo, y_hi, plot_top, plot_h, true);

    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = write!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n");

    let (xt, xdec) = ticks(x_lo, x_hi);
    let (yt, ydec) = ticks(y_lo, y_hi);
    for &t in &yt {
        let py = y.map(t);
        let _ = write!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" \
             stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n",
            plot_left,
            plot_left + plot_w
        );
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            plot_left - 8.0,
            py + 4.0,
            xml_escape(&fmt_tick(t, ydec))
        );
    }
    for &t in &xt {
        let px = x.map(t);
        let _ = write!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" \
             stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n",
            plot_top,
            plot_top + plot_h
        );
        let _ = write!(
            svg,
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            plot_top + plot_h + 18.0,
            xml_escape(&fmt_tick(t, xdec))
        );
    }
    // Axis spines drawn after gridlines so they sit on top.
    let _ = write!(
        svg,
        "<rect x=\"{plot_left:.2}\" y=\"{plot_top:.2}\" width=\"{plot_w:.2}\" \
         height=\"{plot_h:.2}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    );

    if !opts.title.is_empty() {
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" \
             font-weight=\"bold\">{}</text>\n",
            w / 2.0,
            xml_escape(&opts.title)
        );
    }
    if !opts.x_label.is_empty() {
        let _ = write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            plot_left + plot_w / 2.0,
            h - 12.0,
            xml_escape(&opts.x_label)
        );
    }
    if !opts.y_label.is_empty() {
        let cy = plot_top + plot_h / 2.0;
        let _ = write!(
            svg,
            "<text x=\"16\" y=\"{cy:.2}\" text-anchor=\"middle\" \
             transform=\"rotate(-90 16 {cy:.2})\">{}</text>\n",
            xml_escape(&opts.y_label)
        );
    }
    Frame { x, y, plot_left, plot_top, plot_w }
}

/// One legend row: a color swatch and the escaped name.
fn legend_entry(svg: &mut String, x: f64, y: f64, color: &str, name: &str) {
    let _ = write!(
        svg,
        "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
        y - 10.0
    );
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{y:.2}\">{}</text>\n",
        x + 17.0,
        xml_escape(name)
    );
}

fn validate_options(opts: &ChartOptions) -> Result<()> {
    let min_w = (MARGIN_LEFT + MARGIN_RIGHT + 40.0) as u32;
    let min_h = (MARGIN_TOP + MARGIN_BOTTOM + 40.0) as u32;
    if opts.width < min_w || opts.height < min_h {
        return Err(SfeError::Param(format!(
            "chart canvas {}x{} is below the minimum {min_w}x{min_h}",
            opts.width, opts.height
        )));
    }
    Ok(())
}

/// Renders `series` as polylines with circle markers and optional
/// whisker bars. Errors on an empty chart, non-finite coordinates, or a
/// whisker vector whose length disagrees with its series.
pub fn line_chart(series: &[Series], opts: &ChartOptions) -> Result<String> {
    validate_options(opts)?;
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(SfeError::Param("line chart needs at least one data point".into()));
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        if let Some(w) = &s.whiskers {
            if w.len() != s.points.len() {
                return Err(SfeError::Structure(format!(
                    "series `{}` has {} whiskers for {} points",
                    s.name,
                    w.len(),
                    s.points.len()
                )));
            }
        }
        for (i, &(px, py)) in s.points.iter().enumerate() {
            let wk = s.whiskers.as_ref().map_or(0.0, |w| w[i]);
            if !px.is_finite() || !py.is_finite() || !wk.is_finite() || wk < 0.0 {
                return Err(SfeError::InvalidData(format!(
                    "series `{}` point {i} is not plottable: ({px}, {py}) ± {wk}",
                    s.name
                )));
            }
            x_lo = x_lo.min(px);
            x_hi = x_hi.max(px);
            y_lo = y_lo.min(py - wk);
            y_hi = y_hi.max(py + wk);
        }
    }

    let mut svg = String::new();
    let f = frame(&mut svg, opts, (x_lo, x_hi), (y_lo, y_hi));
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if let Some(w) = &s.whiskers {
            for (&(px, py), &wk) in s.points.iter().zip(w) {
                if wk == 0.0 {
                    continue;
                }
                let cx = f.x.map(px);
                let (y0, y1) = (f.y.map(py - wk), f.y.map(py + wk));
                let _ = write!(
                    svg,
                    "<line x1=\"{cx:.2}\" y1=\"{y0:.2}\" x2=\"{cx:.2}\" y2=\"{y1:.2}\" \
                     stroke=\"{color}\" stroke-width=\"1\"/>\n"
                );
                for yc in [y0, y1] {
                    let _ = write!(
                        svg,
                        "<line x1=\"{:.2}\" y1=\"{yc:.2}\" x2=\"{:.2}\" y2=\"{yc:.2}\" \
                         stroke=\"{color}\" stroke-width=\"1\"/>\n",
                        cx - 4.0,
                        cx + 4.0
                    );
                }
            }
        }
        if s.points.len() > 1 {
            let mut path = String::new();
            for &(px, py) in &s.points {
                let _ = write!(path, "{:.2},{:.2} ", f.x.map(px), f.y.map(py));
            }
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"2\"/>\n",
                path.trim_end()
            );
        }
        for &(px, py) in &s.points {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                f.x.map(px),
                f.y.map(py)
            );
        }
    }
    if series.len() > 1 || !series[0].name.is_empty() {
        let lx = f.plot_left + f.plot_w - 150.0;
        for (si, s) in series.iter().enumerate() {
            let ly = f.plot_top + 18.0 + 18.0 * si as f64;
            legend_entry(&mut svg, lx, ly, PALETTE[si % PALETTE.len()], &s.name);
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders a scatter plot colored by label. Labels are assigned palette
/// colors in sorted order so the same label set always maps to the same
/// colors; unlabeled points render gray and are omitted from the legend.
pub fn scatter_chart(points: &[ScatterPoint], opts: &ChartOptions) -> Result<String> {
    validate_options(opts)?;
    if points.is_empty() {
        return Err(SfeError::Param("scatter chart needs at least one point".into()));
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, p) in points.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(SfeError::InvalidData(format!(
                "scatter point {i} is not plottable: ({}, {})",
                p.x, p.y
            )));
        }
        x_lo = x_lo.min(p.x);
        x_hi = x_hi.max(p.x);
        y_lo = y_lo.min(p.y);
        y_hi = y_hi.max(p.y);
    }
    let mut labels: Vec<&str> =
        points.iter().filter_map(|p| p.label.as_deref()).collect();
    labels.sort_unstable();
    labels.dedup();
    let color_of = |label: Option<&str>| -> &str {
        match label {
            None => UNLABELED,
            Some(l) => {
                let idx = labels.binary_search(&l).expect("label was collected above");
                PALETTE[idx % PALETTE.len()]
            }
        }
    };

    let mut svg = String::new();
    let f = frame(&mut svg, opts, (x_lo, x_hi), (y_lo, y_hi));
    for p in points {
        let _ = write!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
            f.x.map(p.x),
            f.y.map(p.y),
            color_of(p.label.as_deref())
        );
    }
    let lx = f.plot_left + f.plot_w - 150.0;
    for (li, l) in labels.iter().enumerate() {
        let ly = f.plot_top + 18.0 + 18.0 * li as f64;
        legend_entry(&mut svg, lx, ly, PALETTE[li % PALETTE.len()], l);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
