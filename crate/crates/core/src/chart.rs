//! Hand-rolled SVG emission for the result charts: line charts with error
//! bands and grouped bar charts with whiskers. No renderer dependency and
//! byte-deterministic output for identical input.

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 22.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 64.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct LineSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric half-width of the error band; empty for none.
    pub err: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BarGroup {
    pub label: String,
    pub values: Vec<f64>,
    pub errs: Vec<f64>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if a >= 10000.0 || a < 0.001 {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// Round tick spacing to 1/2/5 times a power of ten.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    step * mag
}

fn linear_ticks(min: f64, max: f64) -> Vec<f64> {
    let step = nice_step(max - min, 5);
    let start = (min / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = start;
    while t <= max + 1e-12 * step.abs() {
        out.push(t);
        t += step;
    }
    out
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_y: bool,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-300);
        MARGIN_LEFT + (v - self.x_min) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let (v, lo, hi) = if self.log_y {
            (v.max(1e-300).log10(), self.y_min, self.y_max)
        } else {
            (v, self.y_min, self.y_max)
        };
        let span = (hi - lo).max(1e-300);
        HEIGHT - MARGIN_BOTTOM - (v - lo) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" ",
            "text-anchor=\"middle\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_labels(out: &mut String, x_label: &str, y_label: &str) {
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 14.0,
        xml_escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"20\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>\n",
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        xml_escape(y_label)
    ));
}

fn frame_box(out: &mut String) {
    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP),
        fmt(WIDTH - MARGIN_LEFT - MARGIN_RIGHT),
        fmt(HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    ));
}

fn legend(out: &mut String, labels: &[String]) {
    let mut y = MARGIN_TOP + 14.0;
    for (i, label) in labels.iter().enumerate() {
        let x = WIDTH - MARGIN_RIGHT - 170.0;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
            fmt(x),
            fmt(y - 10.0),
            PALETTE[i % PALETTE.len()]
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            fmt(x + 18.0),
            fmt(y),
            xml_escape(label)
        ));
        y += 18.0;
    }
}

/// Line chart with optional symmetric error bands. `log_y` switches the
/// vertical axis to decades.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[LineSeries],
    log_y: bool,
) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptyInput("no points to plot".into()));
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (i, (x, y)) in s.points.iter().enumerate() {
            let e = s.err.get(i).copied().unwrap_or(0.0);
            x_min = x_min.min(*x);
            x_max = x_max.max(*x);
            let (lo, hi) = (y - e, y + e);
            if log_y {
                if hi > 0.0 {
                    y_max = y_max.max(hi.log10());
                }
                if lo > 0.0 {
                    y_min = y_min.min(lo.log10());
                } else if *y > 0.0 {
                    y_min = y_min.min(y.log10() - 0.5);
                }
            } else {
                y_min = y_min.min(lo);
                y_max = y_max.max(hi);
            }
        }
    }
    if !(x_min.is_finite() && x_max.is_finite() && y_min.is_finite() && y_max.is_finite()) {
        return Err(Error::EmptyInput("no finite plot range".into()));
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let frame = Frame {
        x_min,
        x_max,
        y_min: y_min - pad,
        y_max: y_max + pad,
        log_y,
    };
    let mut out = svg_header(title);
    frame_box(&mut out);
    for t in linear_ticks(frame.x_min, frame.x_max) {
        let px = frame.x(t);
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#333\"/>\n",
            fmt(px),
            fmt(HEIGHT - MARGIN_BOTTOM),
            fmt(HEIGHT - MARGIN_BOTTOM + 5.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(px),
            fmt(HEIGHT - MARGIN_BOTTOM + 18.0),
            fmt_tick(t)
        ));
    }
    if log_y {
        let lo = frame.y_min.floor() as i64;
        let hi = frame.y_max.ceil() as i64;
        for p in lo..=hi {
            let pf = p as f64;
            if pf < frame.y_min - 1e-9 || pf > frame.y_max + 1e-9 {
                continue;
            }
            let v = 10f64.powi(p as i32);
            let py = frame.y(v);
            out.push_str(&format!(
                "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#ccc\" stroke-dasharray=\"3 3\"/>\n",
                fmt(py),
                fmt(MARGIN_LEFT),
                fmt(WIDTH - MARGIN_RIGHT)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                fmt(MARGIN_LEFT - 6.0),
                fmt(py + 4.0),
                fmt_tick(v)
            ));
        }
    } else {
        for t in linear_ticks(frame.y_min, frame.y_max) {
            let py = frame.y(t);
            out.push_str(&format!(
                "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#ccc\" stroke-dasharray=\"3 3\"/>\n",
                fmt(py),
                fmt(MARGIN_LEFT),
                fmt(WIDTH - MARGIN_RIGHT)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                fmt(MARGIN_LEFT - 6.0),
                fmt(py + 4.0),
                fmt_tick(t)
            ));
        }
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !s.err.is_empty() && s.points.len() > 1 {
            let mut path = String::from("M");
            for (k, (x, y)) in s.points.iter().enumerate() {
                let e = s.err.get(k).copied().unwrap_or(0.0);
                path.push_str(&format!(" {} {}", fmt(frame.x(*x)), fmt(frame.y(y + e))));
            }
            for (k, (x, y)) in s.points.iter().enumerate().rev() {
                let e = s.err.get(k).copied().unwrap_or(0.0);
                let lo = if log_y { (y - e).max(y * 0.1) } else { y - e };
                path.push_str(&format!(" L {} {}", fmt(frame.x(*x)), fmt(frame.y(lo))));
            }
            path.push_str(" Z");
            out.push_str(&format!(
                "<path d=\"{path}\" fill=\"{color}\" opacity=\"0.15\" stroke=\"none\"/>\n"
            ));
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{},{}", fmt(frame.x(*x)), fmt(frame.y(*y))))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            pts.join(" "),
            color
        ));
        for (x, y) in &s.points {
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                fmt(frame.x(*x)),
                fmt(frame.y(*y)),
                color
            ));
        }
    }
    axis_labels(&mut out, x_label, y_label);
    legend(
        &mut out,
        &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>(),
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grouped bar chart with error whiskers. `series_labels` name the bars
/// within each group.
pub fn bar_chart(
    title: &str,
    y_label: &str,
    series_labels: &[String],
    groups: &[BarGroup],
) -> Result<String> {
    if groups.is_empty() || series_labels.is_empty() {
        return Err(Error::EmptyInput("no bars to plot".into()));
    }
    let mut y_min: f64 = 0.0;
    let mut y_max = f64::NEG_INFINITY;
    for g in groups {
        if g.values.len() != series_labels.len() {
            return Err(Error::Dimension(format!(
                "group '{}' has {} values for {} series",
                g.label,
                g.values.len(),
                series_labels.len()
            )));
        }
        for (i, v) in g.values.iter().enumerate() {
            let e = g.errs.get(i).copied().unwrap_or(0.0);
            y_max = y_max.max(v + e);
            y_min = y_min.min(v - e);
        }
    }
    if !y_max.is_finite() {
        return Err(Error::EmptyInput("no finite bar heights".into()));
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let frame = Frame {
        x_min: 0.0,
        x_max: groups.len() as f64,
        y_min,
        y_max: y_max + 0.08 * (y_max - y_min),
        log_y: false,
    };
    let mut out = svg_header(title);
    frame_box(&mut out);
    for t in linear_ticks(frame.y_min, frame.y_max) {
        let py = frame.y(t);
        out.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#ccc\" stroke-dasharray=\"3 3\"/>\n",
            fmt(py),
            fmt(MARGIN_LEFT),
            fmt(WIDTH - MARGIN_RIGHT)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 6.0),
            fmt(py + 4.0),
            fmt_tick(t)
        ));
    }
    let group_width = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / groups.len() as f64;
    let bar_width = group_width * 0.8 / series_labels.len() as f64;
    let zero_y = frame.y(0.0f64.clamp(frame.y_min, frame.y_max));
    for (gi, g) in groups.iter().enumerate() {
        let gx = MARGIN_LEFT + gi as f64 * group_width + group_width * 0.1;
        for (si, v) in g.values.iter().enumerate() {
            let x = gx + si as f64 * bar_width;
            let vy = frame.y(*v);
            let (top, h) = if *v >= 0.0 {
                (vy, zero_y - vy)
            } else {
                (zero_y, vy - zero_y)
            };
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                fmt(x),
                fmt(top),
                fmt(bar_width * 0.92),
                fmt(h.max(0.0)),
                PALETTE[si % PALETTE.len()]
            ));
            let e = g.errs.get(si).copied().unwrap_or(0.0);
            if e > 0.0 {
                let cx = x + bar_width * 0.46;
                let y_hi = frame.y(v + e);
                let y_lo = frame.y(v - e);
                out.push_str(&format!(
                    "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#222\" stroke-width=\"1.5\"/>\n",
                    fmt(cx),
                    fmt(y_hi),
                    fmt(y_lo)
                ));
                for y in [y_hi, y_lo] {
                    out.push_str(&format!(
                        "<line x1=\"{}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#222\" stroke-width=\"1.5\"/>\n",
                        fmt(cx - 4.0),
                        fmt(y),
                        fmt(cx + 4.0)
                    ));
                }
            }
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            fmt(gx + group_width * 0.4),
            fmt(HEIGHT - MARGIN_BOTTOM + 18.0),
            xml_escape(&g.label)
        ));
    }
    axis_labels(&mut out, "", y_label);
    legend(&mut out, series_labels);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_renders_and_is_deterministic() {
        let series = vec![LineSeries {
            label: "mslr".into(),
            points: vec![(20.0, 0.1), (40.0, 0.05), (100.0, 0.02)],
            err: vec![0.01, 0.01, 0.005],
        }];
        let a = line_chart("errors", "rounds", "error", &series, true).unwrap();
        let b = line_chart("errors", "rounds", "error", &series, true).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("polyline"));
    }

    #[test]
    fn bar_chart_renders_with_whiskers() {
        let groups = vec![
            BarGroup {
                label: "a".into(),
                values: vec![2.5, 2.4],
                errs: vec![0.1, 0.1],
            },
            BarGroup {
                label: "b".into(),
                values: vec![2.6, 2.45],
                errs: vec![0.1, 0.1],
            },
        ];
        let svg = bar_chart("utilities", "Q", &["x".into(), "y".into()], &groups).unwrap();
        assert!(svg.contains("rect"));
        assert!(svg.contains("utilities"));
    }

    #[test]
    fn empty_inputs_error() {
        assert!(line_chart("t", "x", "y", &[], false).is_err());
        assert!(bar_chart("t", "y", &[], &[]).is_err());
    }
}
