//! Standalone SVG learning curves (mean line with a ±SD band per series) and
//! a validator for the files this module writes.

use std::fmt::Write;

use thiserror::Error;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, mean, sd)` points, x increasing.
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("non-finite value in series '{0}'")]
    NonFinite(String),
    #[error("not well-formed XML: {0}")]
    Xml(String),
    #[error("invalid plot: {0}")]
    Invalid(String),
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round-ish tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::EPSILON);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= target as f64).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String, PlotError> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(PlotError::Empty);
    }
    for s in series {
        if s.points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
            return Err(PlotError::NonFinite(s.label.clone()));
        }
    }
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, m, sd) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_L + pw / 2.0,
        escape(title)
    );
    // Axes and ticks.
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" fill="none"><rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}"/></g>"#
    );
    for t in ticks(x0, x1, 6) {
        let x = sx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#999" stroke-width="0.5"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            MARGIN_T,
            MARGIN_T + ph,
            MARGIN_T + ph + 16.0,
            fmt_num(t)
        );
    }
    for t in ticks(y0, y1, 6) {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#999" stroke-width="0.5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_L,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            y + 4.0,
            fmt_num(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let upper = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 + p.2)));
        let lower = s.points.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 - p.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        let line: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(
            out,
            r#"<g class="series" data-label="{}"><polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/><polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/></g>"#,
            escape(&s.label),
            band.join(" "),
            line.join(" ")
        );
        let ly = MARGIN_T + 14.0 + 20.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 14.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// What the validator found in a plot file.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgInfo {
    pub width: f64,
    pub height: f64,
    pub series: Vec<String>,
}

fn parse_points(text: &str) -> Result<usize, PlotError> {
    let mut n = 0;
    for pair in text.split_whitespace() {
        let (x, y) = pair
            .split_once(',')
            .ok_or_else(|| PlotError::Invalid(format!("malformed point '{pair}'")))?;
        for v in [x, y] {
            let v: f64 = v.parse().map_err(|_| PlotError::Invalid(format!("malformed coordinate '{v}'")))?;
            if !v.is_finite() {
                return Err(PlotError::Invalid("non-finite coordinate".into()));
            }
        }
        n += 1;
    }
    Ok(n)
}

/// Check that `text` is a well-formed SVG document of the shape written by
/// [`render_svg`]: an `svg` root in the SVG namespace with positive size
/// and matching viewBox, and at least one series whose polyline and band
/// hold valid finite points.
pub fn validate_svg(text: &str) -> Result<SvgInfo, PlotError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| PlotError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" || root.tag_name().namespace() != Some("http://www.w3.org/2000/svg") {
        return Err(PlotError::Invalid("root element is not an SVG svg element".into()));
    }
    let dim = |name: &str| -> Result<f64, PlotError> {
        let v: f64 = root
            .attribute(name)
            .ok_or_else(|| PlotError::Invalid(format!("missing {name}")))?
            .parse()
            .map_err(|_| PlotError::Invalid(format!("bad {name}")))?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(PlotError::Invalid(format!("{name} must be positive")))
        }
    };
    let (width, height) = (dim("width")?, dim("height")?);
    let vb: Vec<f64> = root
        .attribute("viewBox")
        .ok_or_else(|| PlotError::Invalid("missing viewBox".into()))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| PlotError::Invalid("bad viewBox".into())))
        .collect::<Result<_, _>>()?;
    if vb.len() != 4 || vb[2] != width || vb[3] != height {
        return Err(PlotError::Invalid(format!("viewBox {vb:?} does not match {width}x{height}")));
    }
    let mut series = Vec::new();
    for g in root.children().filter(|n| n.has_tag_name("g") && n.attribute("class") == Some("series")) {
        let label = g
            .attribute("data-label")
            .ok_or_else(|| PlotError::Invalid("series without a label".into()))?;
        let line = g
            .children()
            .find(|n| n.has_tag_name("polyline"))
            .ok_or_else(|| PlotError::Invalid(format!("series '{label}' has no line")))?;
        let n = parse_points(line.attribute("points").unwrap_or(""))?;
        if n == 0 {
            return Err(PlotError::Invalid(format!("series '{label}' is empty")));
        }
        if let Some(band) = g.children().find(|n| n.has_tag_name("polygon")) {
            let m = parse_points(band.attribute("points").unwrap_or(""))?;
            if m != 2 * n {
                return Err(PlotError::Invalid(format!("series '{label}' band has {m} points, expected {}", 2 * n)));
            }
        }
        series.push(label.to_string());
    }
    if series.is_empty() {
        return Err(PlotError::Invalid("no data series".into()));
    }
    Ok(SvgInfo { width, height, series })
}
