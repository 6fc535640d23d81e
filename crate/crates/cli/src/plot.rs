//! Minimal SVG line charts: axes, one polyline per series, a legend and an
//! optional dashed reference line.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e8b57", "#edae49", "#6a4c93", "#555555"];

pub struct Series {
    pub name: String,
    /// `None` marks a missing value; the line is broken there.
    pub values: Vec<Option<f64>>,
}

pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Category labels along the x axis, evenly spaced.
    pub x_ticks: Vec<String>,
    pub series: Vec<Series>,
    pub reference: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

impl LineChart {
    fn y_range(&self) -> (f64, f64) {
        let finite = self
            .series
            .iter()
            .flat_map(|s| s.values.iter().flatten())
            .copied()
            .chain(self.reference)
            .filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((0.0f64, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let hi = if hi.is_finite() { hi } else { 1.0 };
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            (lo, lo + 1.0)
        } else {
            (lo, hi + 0.05 * (hi - lo))
        }
    }

    pub fn render(&self) -> String {
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let (y_lo, y_hi) = self.y_range();
        let k = self.x_ticks.len().max(1);
        let x_at = |i: usize| LEFT + plot_w * (i as f64 + 0.5) / k as f64;
        let y_at = |v: f64| TOP + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo));

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(&self.title)
        );
        // axes
        let (x0, y0, x1) = (LEFT, TOP + plot_h, LEFT + plot_w);
        let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
        let _ = writeln!(svg, r#"<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y0}" stroke="black"/>"#);
        for (i, label) in self.x_ticks.iter().enumerate() {
            let x = x_at(i);
            let _ = writeln!(svg, r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/>"#, y0 + 5.0);
            let _ = writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, y0 + 19.0, escape(label));
        }
        for t in 0..=4 {
            let v = y_lo + (y_hi - y_lo) * t as f64 / 4.0;
            let y = y_at(v);
            let _ = writeln!(svg, r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                x0 - 8.0,
                y + 4.0,
                tick_label(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.y_label)
        );
        if let Some(r) = self.reference.filter(|r| r.is_finite()) {
            let y = y_at(r);
            let _ = writeln!(
                svg,
                r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#444444" stroke-dasharray="6 4"/>"##
            );
        }
        for (s_idx, series) in self.series.iter().enumerate() {
            let colour = PALETTE[s_idx % PALETTE.len()];
            let mut segment: Vec<String> = Vec::new();
            let flush = |segment: &mut Vec<String>, svg: &mut String| {
                if segment.len() > 1 {
                    let _ = writeln!(
                        svg,
                        r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                        segment.join(" ")
                    );
                }
                segment.clear();
            };
            for (i, v) in series.values.iter().enumerate() {
                match v.filter(|v| v.is_finite()) {
                    Some(v) => {
                        let (x, y) = (x_at(i), y_at(v));
                        segment.push(format!("{x:.2},{y:.2}"));
                        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{colour}"/>"#);
                    }
                    None => flush(&mut segment, &mut svg),
                }
            }
            flush(&mut segment, &mut svg);
            let ly = TOP + 10.0 + 20.0 * s_idx as f64;
            let lx = x1 + 15.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.name));
        }
        svg.push_str("</svg>\n");
        svg
    }
}
