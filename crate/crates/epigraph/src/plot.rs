//! Static SVG line chart of infectious counts per node.

use std::fmt::Write;

use epigraph_core::{Compartment, TimeSeries};

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 45.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=5).map(|k| lo + (hi - lo) * k as f64 / 5.0).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}

/// One polyline per node of `I` summed over groups, with axis ticks.
pub fn infectious_svg(ts: &TimeSeries) -> String {
    let t0 = ts.times.first().copied().unwrap_or(0.0);
    let t1 = ts.times.last().copied().unwrap_or(1.0).max(t0 + f64::EPSILON);
    let curves: Vec<Vec<f64>> = (0..ts.n_nodes).map(|j| ts.node_series(j, Compartment::I)).collect();
    let ymax = curves.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    let x = |t: f64| LEFT + (t - t0) / (t1 - t0) * (W - LEFT - RIGHT);
    let y = |v: f64| H - BOTTOM - v / ymax * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (xa, ya) = (H - BOTTOM, LEFT);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{xa}" x2="{}" y2="{xa}" stroke="black"/>"#, W - RIGHT);
    let _ = writeln!(s, r#"<line x1="{ya}" y1="{TOP}" x2="{ya}" y2="{xa}" stroke="black"/>"#);
    for t in ticks(t0, t1) {
        let px = x(t);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{xa}" x2="{px:.2}" y2="{}" stroke="black"/>"#, xa + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, xa + 18.0, label(t));
    }
    for v in ticks(0.0, ymax) {
        let py = y(v);
        let _ = writeln!(s, r#"<line x1="{}" y1="{py:.2}" x2="{ya}" y2="{py:.2}" stroke="black"/>"#, ya - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, ya - 8.0, py + 4.0, label(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, (LEFT + W - RIGHT) / 2.0, H - 8.0);
    for (j, c) in curves.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let pts: Vec<String> = ts.times.iter().zip(c).map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 14.0 * (j as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">I node {j}</text>"#, W - RIGHT - 80.0);
    }
    s.push_str("</svg>\n");
    s
}
