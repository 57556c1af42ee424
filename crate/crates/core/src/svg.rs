//! Minimal SVG line and histogram plots with fixed float formatting, so the
//! same data always renders to the same bytes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

pub struct Bars<'a> {
    pub name: &'a str,
    pub edges: &'a [f64],
    pub counts: &'a [u64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{x:.2e}")
    } else {
        let s = format!("{x:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.to_string()
        }
    }
}

/// Padded data range; degenerate ranges are widened to unit width.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 0.0 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
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

fn open(s: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        fmt(WIDTH / 2.0),
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fmt(x0),
        fmt(y0),
        fmt(x1 - x0),
        fmt(y1 - y0)
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{p}" y1="{}" x2="{p}" y2="{}" stroke="black"/>"#,
            fmt(y1),
            fmt(y1 + 4.0),
            p = fmt(px)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt(px),
            fmt(y1 + 18.0),
            escape(&tick_label(xv))
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{p}" x2="{}" y2="{p}" stroke="black"/>"#,
            fmt(x0 - 4.0),
            fmt(x0),
            p = fmt(py)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt(x0 - 6.0),
            fmt(py + 4.0),
            escape(&tick_label(yv))
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        fmt((x0 + x1) / 2.0),
        fmt(HEIGHT - 12.0),
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(y_label),
        y = fmt((y0 + y1) / 2.0)
    );
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="4" fill="{}"/>"#,
            fmt(x),
            fmt(y - 4.0),
            COLORS[i % COLORS.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            fmt(x + 16.0),
            fmt(y + 2.0),
            escape(name)
        );
    }
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let frame = Frame {
        x: range(all().map(|p| p.0)),
        y: range(all().map(|p| p.1)),
    };
    let mut s = String::new();
    open(&mut s, title, &frame, x_label, y_label);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{},{}", fmt(frame.px(x)), fmt(frame.py(y))))
            .collect();
        if pts.len() == 1 {
            let (x, y) = pts[0].split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        } else if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
    }
    legend(&mut s, &series.iter().map(|x| x.name).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Overlaid step-outline histograms, each normalized to a density.
pub fn histogram_plot(title: &str, x_label: &str, bars: &[Bars]) -> String {
    let densities: Vec<Vec<f64>> = bars
        .iter()
        .map(|b| {
            let total: u64 = b.counts.iter().sum();
            b.counts
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let w = b.edges[i + 1] - b.edges[i];
                    if total == 0 || w <= 0.0 {
                        0.0
                    } else {
                        c as f64 / (total as f64 * w)
                    }
                })
                .collect()
        })
        .collect();
    let frame = Frame {
        x: range(bars.iter().flat_map(|b| b.edges.iter().copied())),
        y: (0.0, range(densities.iter().flatten().copied()).1.max(1e-12)),
    };
    let mut s = String::new();
    open(&mut s, title, &frame, x_label, "density");
    for (i, (b, d)) in bars.iter().zip(&densities).enumerate() {
        let mut pts = vec![format!(
            "{},{}",
            fmt(frame.px(b.edges[0])),
            fmt(frame.py(0.0))
        )];
        for (k, &v) in d.iter().enumerate() {
            pts.push(format!(
                "{},{}",
                fmt(frame.px(b.edges[k])),
                fmt(frame.py(v))
            ));
            pts.push(format!(
                "{},{}",
                fmt(frame.px(b.edges[k + 1])),
                fmt(frame.py(v))
            ));
        }
        pts.push(format!(
            "{},{}",
            fmt(frame.px(b.edges[d.len()])),
            fmt(frame.py(0.0))
        ));
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    legend(&mut s, &bars.iter().map(|b| b.name).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}
