//! Minimal SVG charts. Presentation only; every plot has a CSV twin.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 2.0);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x.0 + t * (x.1 - x.0);
        let yv = y.0 + t * (y.1 - y.0);
        let px = x0 + t * (x1 - x0);
        let py = y0 - t * (y0 - y1);
        let _ = writeln!(out, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, y0 + 16.0, tick(xv));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, py + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn project(v: (f64, f64), x: (f64, f64), y: (f64, f64)) -> (f64, f64) {
    let px = MARGIN + (v.0 - x.0) / (x.1 - x.0) * (W - 1.5 * MARGIN);
    let py = (H - MARGIN) - (v.1 - y.0) / (y.1 - y.0) * (H - 1.5 * MARGIN);
    (px, py)
}

fn legend(out: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = MARGIN / 2.0 + 14.0 + 16.0 * k as f64;
        let x = W - MARGIN / 2.0 - 150.0;
        let c = COLORS[k % COLORS.len()];
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{c}"/>"#, y - 10.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(name));
    }
}

/// Polyline chart with markers; `log_x` plots `log10(x)`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let xb = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))));
    let yb = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut out = String::new();
    let xl = if log_x { format!("log10 {x_label}") } else { x_label.to_string() };
    frame(&mut out, title, &xl, y_label, xb, yb);
    for (k, s) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|p| project((tx(p.0), p.1), xb, yb))
            .collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(out, r#"<polyline points="{}" stroke="{c}" fill="none" stroke-width="2"/>"#, path.join(" "));
        for (x, y) in pts {
            let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{c}"/>"#);
        }
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Overlaid step histograms over shared bin `edges`.
pub fn histogram(title: &str, x_label: &str, edges: &[f64], counts: &[(&str, Vec<usize>)]) -> String {
    let xb = (edges[0], edges[edges.len() - 1]);
    let ymax = counts.iter().flat_map(|(_, c)| c.iter().copied()).max().unwrap_or(1).max(1) as f64;
    let yb = (0.0, ymax * 1.05);
    let mut out = String::new();
    frame(&mut out, title, x_label, "count", xb, yb);
    for (k, (_, c)) in counts.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = String::new();
        for (b, &count) in c.iter().enumerate() {
            let (xa, ya) = project((edges[b], count as f64), xb, yb);
            let (xz, _) = project((edges[b + 1], count as f64), xb, yb);
            let _ = write!(path, "{xa:.1},{ya:.1} {xz:.1},{ya:.1} ");
        }
        let _ = writeln!(out, r#"<polyline points="{path}" stroke="{color}" fill="none" stroke-width="1.5"/>"#);
    }
    legend(&mut out, &counts.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
