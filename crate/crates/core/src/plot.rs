//! Static SVG rendering of training traces.
//!
//! Each trace contributes its target step function (black), raw per-step
//! estimates (light) and the smoothed curve (dark) in its own hue. Output
//! depends only on the inputs: coordinates are printed with fixed precision
//! and no timestamps or ids are embedded.

use std::fmt::Write;

use crate::harness::TrainingTrace;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 56.0;
const TICKS: usize = 5;

/// (light, dark) pairs, cycled over traces.
const PALETTE: [(&str, &str); 4] = [
    ("#9ecae1", "#08519c"),
    ("#fdae6b", "#a63603"),
    ("#a1d99b", "#006d2c"),
    ("#bcbddc", "#54278f"),
];

struct Frame {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn fit(series: &[(&str, &TrainingTrace)]) -> Frame {
        let rows = series.iter().flat_map(|(_, t)| t.rows.iter());
        let mut x_max = 0.0f64;
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        let mut any = false;
        for r in rows {
            any = true;
            x_max = x_max.max(r.global_step as f64);
            for y in [r.target_tc, r.raw_estimate, r.smoothed_estimate] {
                if y.is_finite() {
                    lo = lo.min(y);
                    hi = hi.max(y);
                }
            }
        }
        if !any {
            return Frame { x_max: 1.0, y_min: 0.0, y_max: 1.0 };
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let step = nice_step((hi - lo) / TICKS as f64);
        Frame {
            x_max: x_max.max(1.0),
            y_min: (lo / step).floor() * step,
            y_max: (hi / step).ceil() * step,
        }
    }

    fn x(&self, step: f64) -> f64 {
        LEFT + step / self.x_max * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, nats: f64) -> f64 {
        let t = (nats.clamp(self.y_min, self.y_max) - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }
}

/// Smallest of 1, 2, 5 × 10^k that is at least `raw`.
fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn polyline(out: &mut String, points: impl Iterator<Item = (f64, f64)>, color: &str, width: f64, opacity: f64) {
    out.push_str("<polyline fill=\"none\" stroke=\"");
    out.push_str(color);
    let _ = write!(out, "\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\" points=\"");
    let mut first = true;
    for (x, y) in points {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{x:.2},{y:.2}");
    }
    out.push_str("\"/>\n");
}

/// Renders labelled traces into one standalone SVG document.
pub fn render_svg(series: &[(&str, &TrainingTrace)]) -> String {
    let frame = Frame::fit(series);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");

    // Axes and ticks.
    let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        "<path d=\"M{x0},{TOP} V{y0} H{}\" fill=\"none\" stroke=\"black\"/>",
        WIDTH - RIGHT
    );
    for i in 0..=TICKS {
        let v = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / TICKS as f64;
        let y = frame.y(v);
        let _ = writeln!(out, "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>", x0 - 4.0);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x0 - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
        let s = frame.x_max * i as f64 / TICKS as f64;
        let x = frame.x(s);
        let _ = writeln!(out, "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", y0 + 4.0);
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            y0 + 18.0,
            fmt_tick(s.round())
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">step</text>",
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(16 {:.2}) rotate(-90)\" text-anchor=\"middle\">nats</text>",
        (TOP + HEIGHT - BOTTOM) / 2.0
    );

    // Series.
    let mut legend = Vec::new();
    for (k, (label, trace)) in series.iter().enumerate() {
        if trace.is_empty() {
            continue;
        }
        let (light, dark) = PALETTE[k % PALETTE.len()];
        let rows = &trace.rows;
        polyline(&mut out, rows.iter().map(|r| (frame.x(r.global_step as f64), frame.y(r.raw_estimate))), light, 1.0, 0.6);
        polyline(&mut out, rows.iter().map(|r| (frame.x(r.global_step as f64), frame.y(r.smoothed_estimate))), dark, 1.5, 1.0);
        // Step function: hold each target from the previous step to this one.
        let steps = rows.iter().enumerate().flat_map(|(i, r)| {
            let prev = if i == 0 { r.global_step as f64 - 1.0 } else { rows[i - 1].global_step as f64 };
            let y = frame.y(r.target_tc);
            [(frame.x(prev), y), (frame.x(r.global_step as f64), y)]
        });
        polyline(&mut out, dedup_horizontal(steps), "black", 1.5, 1.0);
        legend.push((label.to_string(), light, dark));
    }

    for (i, (label, light, dark)) in legend.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let x = LEFT + 16.0;
        let _ = writeln!(out, "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{light}\" stroke-width=\"3\"/>", x + 12.0);
        let _ = writeln!(out, "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{dark}\" stroke-width=\"3\"/>", x + 12.0, x + 24.0);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", x + 30.0, y + 4.0, escape(label));
    }
    if !legend.is_empty() {
        let y = TOP + 8.0 + 18.0 * legend.len() as f64;
        let x = LEFT + 16.0;
        let _ = writeln!(out, "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"black\" stroke-width=\"3\"/>", x + 24.0);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">true TC</text>", x + 30.0, y + 4.0);
    }
    out.push_str("</svg>\n");
    out
}

/// Drops interior points of horizontal runs so a long constant segment is
/// two points instead of thousands.
fn dedup_horizontal(points: impl Iterator<Item = (f64, f64)>) -> impl Iterator<Item = (f64, f64)> {
    let pts: Vec<(f64, f64)> = points.collect();
    let keep: Vec<(f64, f64)> = pts
        .iter()
        .enumerate()
        .filter(|&(i, p)| {
            i == 0 || i + 1 == pts.len() || !(pts[i - 1].1 == p.1 && pts[i + 1].1 == p.1)
        })
        .map(|(_, p)| *p)
        .collect();
    keep.into_iter()
}
