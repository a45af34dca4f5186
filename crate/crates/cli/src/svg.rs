//! Minimal SVG emission: line charts, grouped bar charts and class heatmaps.

use std::fmt::Write as _;

use mgproj::models::grid_coord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    /// Palette slot; defaults to the series position.
    pub color: Option<usize>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { name: name.into(), points, dashed: false, color: None }
    }

    pub fn color(mut self, slot: usize) -> Self {
        self.color = Some(slot);
        self
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Axis range padded so that a single value still spans a visible interval.
fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 0.5 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let t = format!("{v:.4}");
        let t = t.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".into()
        } else {
            t.to_string()
        }
    }
}

/// Round tick values (steps of 1, 2 or 5 times a power of ten) inside `range`.
fn ticks(range: (f64, f64)) -> Vec<f64> {
    let raw = (range.1 - range.0) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (range.0 / step).ceil() as i64;
    let last = (range.1 / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title))
        .unwrap();
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    writeln!(out, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1)
        .unwrap();
    for v in ticks(frame.y) {
        let y = frame.py(v);
        writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, fmt_tick(v)).unwrap();
    }
    if x_ticks {
        for v in ticks(frame.x) {
            let x = frame.px(v);
            writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 16.0, fmt_tick(v)).unwrap();
        }
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn legend(out: &mut String, names: &[(String, &str, bool)]) {
    for (k, (name, color, dashed)) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT + 12.0;
        let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
        writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x + 22.0
        )
        .unwrap();
        writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 28.0, y + 4.0, escape(name)).unwrap();
    }
}

/// Line chart; a one-point series renders as a marker.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame {
        x: span(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        y: span(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &frame, x_label, y_label, true);
    let mut names = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[s.color.unwrap_or(k) % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        if pts.len() > 1 {
            writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                pts.join(" ")
            )
            .unwrap();
        }
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap();
            writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#).unwrap();
        }
        names.push((s.name.clone(), color, s.dashed));
    }
    legend(&mut out, &names);
    if series.iter().all(|s| s.points.is_empty()) {
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, WIDTH / 2.0, HEIGHT / 2.0).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    categories: &[String],
    series: &[(String, Vec<f64>)],
) -> String {
    let values = series.iter().flat_map(|s| s.1.iter().copied()).chain([0.0]);
    let frame = Frame { x: (0.0, categories.len().max(1) as f64), y: span(values) };
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &frame, x_label, y_label, false);
    let zero = frame.py(0.0);
    writeln!(out, r#"<line x1="{LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="black"/>"#, WIDTH - RIGHT)
        .unwrap();
    let group = frame.px(1.0) - frame.px(0.0);
    let bar = group * 0.8 / series.len().max(1) as f64;
    let step = (categories.len() / 20).max(1);
    for (c, cat) in categories.iter().enumerate() {
        if c % step == 0 {
            writeln!(
                out,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                frame.px(c as f64 + 0.5),
                HEIGHT - BOTTOM + 16.0,
                escape(cat)
            )
            .unwrap();
        }
        for (k, (_, vals)) in series.iter().enumerate() {
            let Some(&v) = vals.get(c) else { continue };
            if !v.is_finite() {
                continue;
            }
            let x = frame.px(c as f64) + group * 0.1 + bar * k as f64;
            let y = frame.py(v);
            writeln!(
                out,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                y.min(zero),
                (y - zero).abs(),
                PALETTE[k % PALETTE.len()]
            )
            .unwrap();
        }
    }
    let names: Vec<_> =
        series.iter().enumerate().map(|(k, s)| (s.0.clone(), PALETTE[k % PALETTE.len()], false)).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Two-class heatmap over a square grid (`classes[i * n + j]` at column `j`,
/// row `i` counted from the bottom) with an optional overlay curve.
pub fn class_heatmap(
    title: &str,
    x_range: [f64; 2],
    y_range: [f64; 2],
    n: usize,
    classes: &[i8],
    overlay: &[(f64, f64)],
) -> String {
    // Cell edges sit half a step outside the outermost nodes.
    let half = |r: [f64; 2]| if n > 1 { (r[1] - r[0]) / (2.0 * (n - 1) as f64) } else { 0.5 };
    let (hx, hy) = (half(x_range), half(y_range));
    let frame = Frame { x: (x_range[0] - hx, x_range[1] + hx), y: (y_range[0] - hy, y_range[1] + hy) };
    let mut out = String::new();
    open(&mut out, title);
    let cw = (frame.px(x_range[0] + 2.0 * hx) - frame.px(x_range[0])).abs();
    let ch = (frame.py(y_range[0]) - frame.py(y_range[0] + 2.0 * hy)).abs();
    for i in 0..n {
        for j in 0..n {
            let fill = if classes[i * n + j] > 0 { "#f4a582" } else { "#92c5de" };
            let x = frame.px(grid_coord(x_range, j, n) - hx);
            let y = frame.py(grid_coord(y_range, i, n) + hy);
            writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                cw + 0.05,
                ch + 0.05
            )
            .unwrap();
        }
    }
    axes(&mut out, &frame, "x1", "x2", true);
    if !overlay.is_empty() {
        let pts: Vec<String> = overlay
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y.clamp(frame.y.0, frame.y.1))))
            .collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#, pts.join(" ")).unwrap();
    }
    legend(
        &mut out,
        &[
            ("class +1".into(), "#f4a582", false),
            ("class -1".into(), "#92c5de", false),
            ("true boundary".into(), "black", false),
        ],
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_series_renders_a_marker() {
        let svg = line_chart("t", "x", "y", &[Series::new("a", vec![(0.0, 0.5)])]);
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("<polyline"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn heatmap_has_one_cell_per_node() {
        let svg = class_heatmap("g", [0.0, 1.0], [0.0, 1.0], 2, &[1, -1, -1, 1], &[(0.0, 0.5), (1.0, 0.5)]);
        assert_eq!(svg.matches("#f4a582\"/>").count(), 2);
        assert_eq!(svg.matches("#92c5de\"/>").count(), 2);
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn bars_carry_sign() {
        let svg = bar_chart("d", "epoch", "diff", &["0".into(), "1".into()], &[("f1".into(), vec![0.1, -0.2])]);
        assert_eq!(svg.matches("<rect x=").count(), 3);
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks((-0.7, 14.7)), vec![0.0, 5.0, 10.0]);
        let t = ticks((0.604, 1.019));
        assert_eq!(t.len(), 4);
        assert!((t[0] - 0.7).abs() < 1e-12 && (t[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_is_escaped() {
        assert!(line_chart("a<b", "x", "y", &[]).contains("a&lt;b"));
    }
}
