//! Log-scale line plots of trace CSVs, written as standalone SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::run::TRACE_HEADER;
use crate::{write_file, BenchError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    OracleCalls,
    Time,
}

impl XAxis {
    pub fn column(self) -> &'static str {
        match self {
            XAxis::OracleCalls => "oracle_calls",
            XAxis::Time => "time_sec",
        }
    }

    fn label(self) -> &'static str {
        match self {
            XAxis::OracleCalls => "oracle calls",
            XAxis::Time => "time (s)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YAxis {
    ObjGap,
    ImageDist,
}

impl YAxis {
    pub fn column(self) -> &'static str {
        match self {
            YAxis::ObjGap => "obj_gap",
            YAxis::ImageDist => "image_dist",
        }
    }

    fn label(self) -> &'static str {
        match self {
            YAxis::ObjGap => "objective gap",
            YAxis::ImageDist => "image distance",
        }
    }
}

/// One line of a plot.
#[derive(Clone, Debug)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads a trace CSV. Rows with a missing or nonpositive `y` are dropped (the
/// axis is logarithmic); an `x` column without any data is an error.
pub fn read_curve(path: &Path, x: XAxis, y: YAxis) -> Result<Curve, BenchError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(BenchError::Plot(format!("{} is not a trace CSV", path.display())));
    }
    let col = |name: &str| headers.iter().position(|h| h == name).expect("fixed header");
    let (xi, yi) = (col(x.column()), col(y.column()));
    let mut points = Vec::new();
    let mut label = String::new();
    let mut x_seen = false;
    for rec in rdr.records() {
        let rec = rec?;
        if label.is_empty() {
            label = format!(
                "{} n={} r={} kappa={} pfail={} seed={}",
                &rec[0], &rec[2], &rec[4], &rec[6], &rec[7], &rec[1]
            );
        }
        let Ok(xv) = rec[xi].parse::<f64>() else {
            continue;
        };
        x_seen = true;
        if let Ok(yv) = rec[yi].parse::<f64>() {
            if yv > 0.0 && yv.is_finite() {
                points.push((xv, yv));
            }
        }
    }
    if !x_seen {
        return Err(BenchError::Plot(format!(
            "column {} has no data in {} (set wall_clock to record time)",
            x.column(),
            path.display()
        )));
    }
    Ok(Curve { label, points })
}

/// Plots every trace in `paths` into `<out_dir>/plot_<x>_<y>.svg`.
pub fn plot_files(paths: &[PathBuf], x: XAxis, y: YAxis, out_dir: &Path) -> Result<PathBuf, BenchError> {
    if paths.is_empty() {
        return Err(BenchError::Plot("no traces to plot".into()));
    }
    let curves = paths
        .iter()
        .map(|p| read_curve(p, x, y))
        .collect::<Result<Vec<_>, _>>()?;
    if curves.iter().all(|c| c.points.is_empty()) {
        return Err(BenchError::Plot(format!("column {} has no positive data", y.column())));
    }
    let svg = render(&curves, x, y);
    let path = out_dir.join(format!("plot_{}_{}.svg", x.column(), y.column()));
    write_file(&path, svg.as_bytes())?;
    Ok(path)
}

/// Plots every trace CSV found directly in `dir`.
pub fn plot_dir(dir: &Path, x: XAxis, y: YAxis) -> Result<PathBuf, BenchError> {
    let entries = std::fs::read_dir(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut traces = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| BenchError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") && is_trace(&path) {
            traces.push(path);
        }
    }
    traces.sort();
    if traces.is_empty() {
        return Err(BenchError::Plot(format!("no trace CSVs in {}", dir.display())));
    }
    plot_files(&traces, x, y, dir)
}

fn is_trace(path: &Path) -> bool {
    csv::Reader::from_path(path)
        .and_then(|mut r| r.headers().map(|h| h.iter().eq(TRACE_HEADER.iter().copied())))
        .unwrap_or(false)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Renders curves with a linear x-axis and a log₁₀ y-axis.
pub fn render(curves: &[Curve], x: XAxis, y: YAxis) -> String {
    let (w, h) = (800.0, 520.0);
    let (left, right, top, bottom) = (80.0, 20.0, 20.0, 60.0);
    let legend_h = 18.0 * curves.len() as f64 + 10.0;
    let height = h + legend_h;
    let pw = w - left - right;
    let ph = h - top - bottom;

    let all = curves.iter().flat_map(|c| c.points.iter());
    let x_max = all.clone().map(|p| p.0).fold(0.0, f64::max).max(1e-12);
    let x_min = all.clone().map(|p| p.0).fold(f64::INFINITY, f64::min).min(0.0);
    let y_lo = all.clone().map(|p| p.1.log10()).fold(f64::INFINITY, f64::min).floor();
    let mut y_hi = all.map(|p| p.1.log10()).fold(f64::NEG_INFINITY, f64::max).ceil();
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let sx = |v: f64| left + (v - x_min) / (x_max - x_min) * pw;
    let sy = |v: f64| top + (y_hi - v.log10()) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{height}" fill="white"/>"#);
    let decades = (y_hi - y_lo) as i64;
    let stride = (decades / 12).max(1);
    for k in 0..=decades {
        let e = y_lo as i64 + k;
        let yy = sy(10f64.powi(e as i32));
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/>"##,
            left + pw
        );
        if k % stride == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#,
                left - 6.0,
                yy + 4.0
            );
        }
    }
    for k in 0..=5 {
        let v = x_min + (x_max - x_min) * k as f64 / 5.0;
        let xx = sx(v);
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph + 18.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        top + ph + 42.0,
        x.label()
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{} (log scale)</text>"#,
        top + ph / 2.0,
        y.label()
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !c.points.is_empty() {
            let pts: Vec<String> = c
                .points
                .iter()
                .map(|&(a, b)| format!("{:.2},{:.2}", sx(a), sy(b)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = h + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/>"#,
            left + 24.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            left + 30.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_curve_has_one_polyline() {
        let c = Curve {
            label: "gnp".into(),
            points: vec![(1.0, 1.0), (2.0, 1e-3), (3.0, 1e-9)],
        };
        let svg = render(&[c], XAxis::OracleCalls, YAxis::ObjGap);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("log scale"));
        assert!(svg.contains(">1e-9<"));
        assert!(svg.contains(">1e0<"));
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b&c"), "a&lt;b&amp;c");
    }

    #[test]
    fn empty_list_is_an_error() {
        let dir = std::env::temp_dir();
        assert!(plot_files(&[], XAxis::OracleCalls, YAxis::ObjGap, &dir).is_err());
    }
}
