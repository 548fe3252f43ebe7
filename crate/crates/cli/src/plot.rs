//! Self-contained SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use slalom_core::nn::EpochRecord;
use slalom_core::sim::Course;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("trace {0:?} has no rows")]
    EmptyTrace(String),
    #[error("nothing to plot in {0:?}")]
    NoData(String),
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Axis-aligned box in data coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub rects: Vec<Rect>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick spacing giving roughly `target` intervals over `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

impl Chart {
    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let pts = self.series.iter().flat_map(|s| s.points.iter().copied());
        let corners = self.rects.iter().flat_map(|r| [(r.x0, r.y0), (r.x1, r.y1)]);
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for (x, y) in pts.chain(corners).filter(|(x, y)| x.is_finite() && y.is_finite()) {
            b = Some(match b {
                None => (x, x, y, y),
                Some((a, c, d, e)) => (a.min(x), c.max(x), d.min(y), e.max(y)),
            });
        }
        let (mut x0, mut x1, mut y0, mut y1) = b?;
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        Some((x0, x1, y0 - pad, y1 + pad))
    }

    pub fn render(&self) -> Result<String, PlotError> {
        if self.series.iter().all(|s| s.points.is_empty()) {
            return Err(PlotError::NoData(self.title.clone()));
        }
        let (x0, x1, y0, y1) = self.bounds().ok_or_else(|| PlotError::NoData(self.title.clone()))?;
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );

        let xs = tick_step(x1 - x0, 8.0);
        let mut t = (x0 / xs).ceil() * xs;
        while t <= x1 + 1e-9 * xs {
            let px = sx(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{:.2}" stroke="#e5e5e5"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(t, xs)
            );
            t += xs;
        }
        let ys = tick_step(y1 - y0, 6.0);
        let mut t = (y0 / ys).ceil() * ys;
        while t <= y1 + 1e-9 * ys {
            let py = sy(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e5e5e5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                py + 4.0,
                fmt_tick(t, ys)
            );
            t += ys;
        }
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for r in &self.rects {
            let (ax, bx) = (sx(r.x0.min(r.x1)), sx(r.x0.max(r.x1)));
            let (ay, by) = (sy(r.y0.max(r.y1)), sy(r.y0.min(r.y1)));
            let _ = writeln!(
                svg,
                r##"<rect x="{ax:.2}" y="{ay:.2}" width="{:.2}" height="{:.2}" fill="#d62728" fill-opacity="0.25" stroke="#d62728"/>"##,
                bx - ax,
                by - ay
            );
        }

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.4" points="{}"/>"#,
                pts.join(" ")
            );
            if i < 20 {
                let ly = TOP + 14.0 + 16.0 * i as f64;
                let lx = LEFT + pw + 12.0;
                let _ = writeln!(
                    svg,
                    r#"<line x1="{lx}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{}" y="{ly:.2}">{}</text>"#,
                    ly - 4.0,
                    lx + 18.0,
                    ly - 4.0,
                    lx + 24.0,
                    escape(&s.label)
                );
            }
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }

    /// Renders first, so a chart that cannot be drawn leaves no file behind.
    pub fn write(&self, path: &Path) -> Result<(), PlotError> {
        let svg = self.render()?;
        fs::write(path, svg).map_err(|source| PlotError::Write { path: path.display().to_string(), source })
    }
}

/// Samples of one run as needed by the plots.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTrace {
    pub label: String,
    /// `(t, x, y, speed km/h, wheel angle)` per tick.
    pub rows: Vec<[f64; 5]>,
}

impl PlotTrace {
    fn column(&self, a: usize, b: usize) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r[a], r[b])).collect()
    }
}

fn check(traces: &[PlotTrace]) -> Result<(), PlotError> {
    if let Some(t) = traces.iter().find(|t| t.rows.is_empty()) {
        return Err(PlotError::EmptyTrace(t.label.clone()));
    }
    if traces.is_empty() {
        return Err(PlotError::NoData("trace list".into()));
    }
    Ok(())
}

/// Half-height (m) of the drawn cone-set boxes.
const CONE_BOX_HALF: f64 = 0.5;

pub fn paths_chart(traces: &[PlotTrace], course: &Course) -> Result<Chart, PlotError> {
    check(traces)?;
    let rects = course
        .cone_sets
        .iter()
        .map(|s| {
            let y = course.cone_y(s);
            Rect { x0: s.x_start, y0: y - CONE_BOX_HALF, x1: s.x_end, y1: y + CONE_BOX_HALF }
        })
        .collect();
    Ok(Chart {
        title: "Vehicle paths".into(),
        x_label: "x (m)".into(),
        y_label: "y (m)".into(),
        series: traces.iter().map(|t| Series { label: t.label.clone(), points: t.column(1, 2) }).collect(),
        rects,
    })
}

pub fn speed_chart(traces: &[PlotTrace]) -> Result<Chart, PlotError> {
    check(traces)?;
    Ok(Chart {
        title: "Longitudinal speed".into(),
        x_label: "time (s)".into(),
        y_label: "speed (km/h)".into(),
        series: traces.iter().map(|t| Series { label: t.label.clone(), points: t.column(0, 3) }).collect(),
        rects: Vec::new(),
    })
}

pub fn steering_chart(traces: &[PlotTrace]) -> Result<Chart, PlotError> {
    check(traces)?;
    Ok(Chart {
        title: "Steering wheel angle".into(),
        x_label: "time (s)".into(),
        y_label: "wheel angle (rad)".into(),
        series: traces.iter().map(|t| Series { label: t.label.clone(), points: t.column(0, 4) }).collect(),
        rects: Vec::new(),
    })
}

/// Wheel angle against distance, so runs of different duration line up.
pub fn steering_overlay_chart(traces: &[PlotTrace]) -> Result<Chart, PlotError> {
    check(traces)?;
    Ok(Chart {
        title: "Steering wheel angle along the course".into(),
        x_label: "x (m)".into(),
        y_label: "wheel angle (rad)".into(),
        series: traces.iter().map(|t| Series { label: t.label.clone(), points: t.column(1, 4) }).collect(),
        rects: Vec::new(),
    })
}

/// Training and validation MSE per epoch on a log scale.
pub fn loss_chart(history: &[EpochRecord]) -> Result<Chart, PlotError> {
    if history.is_empty() {
        return Err(PlotError::NoData("loss history".into()));
    }
    let train = history.iter().map(|e| (e.epoch as f64, e.train_mse.log10())).collect();
    let mut series = vec![Series { label: "train".into(), points: train }];
    let val: Vec<(f64, f64)> =
        history.iter().filter_map(|e| e.val_mse.map(|v| (e.epoch as f64, v.log10()))).collect();
    if !val.is_empty() {
        series.push(Series { label: "validation".into(), points: val });
    }
    Ok(Chart {
        title: "Training loss".into(),
        x_label: "epoch".into(),
        y_label: "log10 MSE".into(),
        series,
        rects: Vec::new(),
    })
}
