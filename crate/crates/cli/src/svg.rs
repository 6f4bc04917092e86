//! Minimal SVG charts for eyeballing analysis outputs.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r##"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="#444"/>"##,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    for (v, x, y, anchor) in [
        (f.x0, PAD, H - PAD + 14.0, "start"),
        (f.x1, W - PAD, H - PAD + 14.0, "end"),
        (f.y0, PAD - 4.0, H - PAD, "end"),
        (f.y1, PAD - 4.0, PAD + 4.0, "end"),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, tick(v));
    }
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64)]) -> String {
    let f = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut s = open(title, xlabel, ylabel, &f);
    for &(x, y) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="1.6" fill="{}" fill-opacity="0.5"/>"#,
            f.px(x),
            f.py(y),
            PALETTE[0]
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn bars(title: &str, xlabel: &str, ylabel: &str, values: &[f64]) -> String {
    let f = Frame {
        x0: 0.0,
        x1: values.len().max(1) as f64,
        y0: 0.0,
        y1: values.iter().copied().fold(0.0, f64::max).max(1e-12),
    };
    let mut s = open(title, xlabel, ylabel, &f);
    let w = (f.px(1.0) - f.px(0.0)) * 0.8;
    for (i, &v) in values.iter().enumerate() {
        let (x, y) = (f.px(i as f64) + w * 0.125, f.py(v.max(0.0)));
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{:.1}" fill="{}"/>"#,
            (H - PAD - y).max(0.0),
            PALETTE[0]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per named series over a shared x index.
pub fn lines(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<f64>)]) -> String {
    let xs = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
    let f = Frame::fit([0.0, (xs - 1) as f64].into_iter(), series.iter().flat_map(|s| s.1.iter().copied()));
    let mut s = open(title, xlabel, ylabel, &f);
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_finite())
            .map(|(i, &y)| format!("{:.1},{:.1}", f.px(i as f64), f.py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 100.0,
            PAD + 14.0 * k as f64,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
