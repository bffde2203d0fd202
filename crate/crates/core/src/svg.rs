//! Bare-bones SVG scatter/line charts. Output depends only on the input
//! data, with every coordinate printed to two decimals.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stroke {
    Solid,
    Dashed,
    Dotted,
}

#[derive(Debug, Clone)]
enum Mark {
    Points {
        label: String,
        xy: Vec<(f64, f64)>,
    },
    Line {
        label: String,
        xy: Vec<(f64, f64)>,
        stroke: Stroke,
    },
    /// Reference line `y = intercept + slope * x` across the x range.
    Reference {
        slope: f64,
        intercept: f64,
        stroke: Stroke,
    },
}

#[derive(Debug, Clone)]
pub struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    marks: Vec<Mark>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            marks: Vec::new(),
        }
    }

    pub fn points(mut self, label: &str, xy: Vec<(f64, f64)>) -> Self {
        self.marks.push(Mark::Points {
            label: label.to_string(),
            xy,
        });
        self
    }

    pub fn line(mut self, label: &str, xy: Vec<(f64, f64)>, stroke: Stroke) -> Self {
        self.marks.push(Mark::Line {
            label: label.to_string(),
            xy,
            stroke,
        });
        self
    }

    pub fn reference(mut self, slope: f64, intercept: f64, stroke: Stroke) -> Self {
        self.marks.push(Mark::Reference {
            slope,
            intercept,
            stroke,
        });
        self
    }

    fn data_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.marks
            .iter()
            .flat_map(|m| match m {
                Mark::Points { xy, .. } | Mark::Line { xy, .. } => xy.as_slice(),
                Mark::Reference { .. } => &[],
            })
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    }

    fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in self.data_points() {
            xr = (xr.0.min(x), xr.1.max(x));
            yr = (yr.0.min(y), yr.1.max(y));
        }
        // Horizontal references stay in view.
        for m in &self.marks {
            if let Mark::Reference {
                slope: 0.0,
                intercept,
                ..
            } = m
            {
                yr = (yr.0.min(*intercept), yr.1.max(*intercept));
            }
        }
        let pad = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo == 0.0 {
                (lo - 0.5, hi + 0.5)
            } else {
                let p = 0.05 * (hi - lo);
                (lo - p, hi + p)
            }
        };
        (pad(xr), pad(yr))
    }

    pub fn render(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.ranges();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            r#"<defs><clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}"/></clipPath></defs>"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="13">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = x0 + t * (x1 - x0);
            let yv = y0 + t * (y1 - y0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
                sx(xv),
                TOP + ph + 16.0,
                xv
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
                LEFT - 6.0,
                sy(yv) + 4.0,
                yv
            );
        }

        let _ = writeln!(s, r#"<g clip-path="url(#plot)">"#);
        let mut legend = Vec::new();
        let mut series = 0;
        for mark in &self.marks {
            match mark {
                Mark::Reference {
                    slope,
                    intercept,
                    stroke,
                } => {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="grey"{}/>"#,
                        sx(x0),
                        sy(intercept + slope * x0),
                        sx(x1),
                        sy(intercept + slope * x1),
                        dash(*stroke)
                    );
                }
                Mark::Points { label, xy } => {
                    let color = PALETTE[series % PALETTE.len()];
                    series += 1;
                    for &(x, y) in xy.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                            sx(x),
                            sy(y)
                        );
                    }
                    legend.push((label.clone(), color));
                }
                Mark::Line { label, xy, stroke } => {
                    let color = PALETTE[series % PALETTE.len()];
                    series += 1;
                    let pts: Vec<String> = xy
                        .iter()
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{}/>"#,
                        pts.join(" "),
                        dash(*stroke)
                    );
                    legend.push((label.clone(), color));
                }
            }
        }
        let _ = writeln!(s, "</g>");
        for (i, (label, color)) in legend
            .iter()
            .enumerate()
            .filter(|(_, (l, _))| !l.is_empty())
        {
            let y = TOP + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{y:.2}" text-anchor="end" fill="{color}">{}</text>"#,
                WIDTH - RIGHT - 6.0,
                escape(label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn dash(stroke: Stroke) -> &'static str {
    match stroke {
        Stroke::Solid => "",
        Stroke::Dashed => r#" stroke-dasharray="6 4""#,
        Stroke::Dotted => r#" stroke-dasharray="2 3""#,
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
