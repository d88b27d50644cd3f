//! Minimal SVG 1.1 charts: multi-series line plots and polar histograms.

use std::f64::consts::PI;
use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One polyline; `None` values break the line.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, Option<f64>)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(w: f64, h: f64, title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        esc(title)
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart with axis labels, min/max tick labels and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().filter_map(|p| p.1));
    let (x0, x1) = range(xs);
    let (y0, y1) = range(ys);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = header(WIDTH, HEIGHT, title);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, "<path d=\"M{l} {t}V{b}H{r}\" fill=\"none\" stroke=\"black\"/>");
    for (x, anchor, v) in [(l, "start", x0), (r, "end", x1)] {
        let _ = writeln!(s, "<text x=\"{x}\" y=\"{}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>", b + 14.0);
    }
    for (y, v) in [(b, y0), (t, y1)] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>", l - 4.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>", WIDTH / 2.0, HEIGHT - 10.0, esc(x_label));
    let _ = writeln!(s, "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>", HEIGHT / 2.0, HEIGHT / 2.0, esc(y_label));
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &ser.points {
            match y {
                Some(y) => {
                    let _ = write!(d, "{}{:.2} {:.2}", if pen_down { "L" } else { "M" }, px(x), py(y));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(s, "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>");
        let ly = t + 14.0 * k as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" fill=\"{color}\">{}</text>", r, esc(ser.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Rose diagram of bin counts over `(−π, π]`, angle 0 pointing right and
/// positive angles counter-clockwise on screen.
pub fn polar_histogram(title: &str, counts: &[usize]) -> String {
    let size = 320.0;
    let (cx, cy) = (size / 2.0, size / 2.0 + 10.0);
    let radius = size / 2.0 - 30.0;
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut s = header(size, size + 20.0, title);
    let _ = writeln!(s, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{radius}\" fill=\"none\" stroke=\"#999\"/>");
    let bins = counts.len().max(1) as f64;
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let a0 = -PI + 2.0 * PI * k as f64 / bins;
        let a1 = a0 + 2.0 * PI / bins;
        let r = radius * (c as f64 / max).sqrt();
        let (x0, y0) = (cx + r * a0.cos(), cy - r * a0.sin());
        let (x1, y1) = (cx + r * a1.cos(), cy - r * a1.sin());
        let _ = writeln!(
            s,
            "<path d=\"M{cx} {cy}L{x0:.2} {y0:.2}A{r:.2} {r:.2} 0 0 0 {x1:.2} {y1:.2}Z\" fill=\"{}\" fill-opacity=\"0.7\" stroke=\"white\"/>",
            COLORS[0]
        );
    }
    s.push_str("</svg>\n");
    s
}
