//! Minimal SVG line and grouped-bar charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

struct Frame {
    out: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
        let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
        let _ = writeln!(out, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        let mut f = Self { out, x, y };
        for i in 0..=4 {
            let v = y.0 + (y.1 - y.0) * i as f64 / 4.0;
            let py = f.py(v);
            let _ = writeln!(f.out, r##"<line x1="{x0}" y1="{py:.1}" x2="{x1}" y2="{py:.1}" stroke="#ddd"/>"##);
            let _ = writeln!(f.out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, py + 4.0, fmt_tick(v));
        }
        f
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - RIGHT - LEFT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - BOTTOM - TOP)
    }

    fn x_tick(&mut self, px: f64, label: &str) {
        let y0 = H - BOTTOM;
        let _ = writeln!(self.out, r#"<line x1="{px:.1}" y1="{y0}" x2="{px:.1}" y2="{}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(self.out, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, y0 + 18.0, escape(label));
    }

    fn legend(&mut self, i: usize, name: &str) {
        let (x, y) = (W - RIGHT + 14.0, TOP + 10.0 + 18.0 * i as f64);
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(self.out, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/>"#, y - 10.0);
        let _ = writeln!(self.out, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(name));
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Polyline chart with point markers; non-finite points are skipped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let x = range(all().map(|p| p.0));
    let (ylo, yhi) = range(all().map(|p| p.1));
    let y = (ylo.min(0.0), yhi);
    let mut f = Frame::new(title, x_label, y_label, x, y);
    for i in 0..=4 {
        let v = x.0 + (x.1 - x.0) * i as f64 / 4.0;
        let px = f.px(v);
        f.x_tick(px, &fmt_tick(v));
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(a, b)| (f.px(a), f.py(b)))
            .collect();
        if pts.len() > 1 {
            let d: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
            let _ = writeln!(f.out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
        }
        for (a, b) in &pts {
            let _ = writeln!(f.out, r#"<circle cx="{a:.1}" cy="{b:.1}" r="3" fill="{color}"/>"#);
        }
        f.legend(i, &s.name);
    }
    f.finish()
}

/// Grouped bars: one group per category, one bar per series. Missing values
/// leave a gap.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, categories: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let values = series.iter().flat_map(|s| s.1.iter().flatten().copied());
    let (_, yhi) = range(values.chain(std::iter::once(0.0)));
    let mut f = Frame::new(title, x_label, y_label, (0.0, categories.len().max(1) as f64), (0.0, yhi));
    let slot = (W - RIGHT - LEFT) / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let start = LEFT + slot * c as f64 + slot * 0.1;
        f.x_tick(start + slot * 0.4, cat);
        for (i, (_, vals)) in series.iter().enumerate() {
            let Some(v) = vals.get(c).copied().flatten() else { continue };
            let (top, base) = (f.py(v), f.py(0.0));
            let _ = writeln!(
                f.out,
                r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                start + bar * i as f64,
                bar - 1.0,
                (base - top).max(0.0),
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    for (i, (name, _)) in series.iter().enumerate() {
        f.legend(i, name);
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let s = line_chart("t", "x", "y", &[Series { name: "a<b".into(), points: vec![(1.0, 2.0), (2.0, f64::NAN), (3.0, 1.0)] }]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a&lt;b"));
        assert_eq!(s.matches("<circle").count(), 2);
        let b = bar_chart("t", "k", "r", &["1".into(), "2".into()], &[("random".into(), vec![Some(0.5), None])]);
        assert_eq!(b.matches("<rect").count(), 1 + 1 + 1);
    }

    #[test]
    fn empty_series_render() {
        assert!(line_chart("t", "x", "y", &[]).contains("</svg>"));
    }
}
