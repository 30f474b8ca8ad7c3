//! Minimal deterministic SVG line plots from CSV columns.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#000000"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Axis {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Scales {
    pub x: Axis,
    pub y: Axis,
}

impl Axis {
    fn map(self, v: f64) -> Option<f64> {
        match self {
            Axis::Linear if v.is_finite() => Some(v),
            Axis::Log if v.is_finite() && v > 0.0 => Some(v.log10()),
            _ => None,
        }
    }
}

struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if hi == lo {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
            return Some(Self { lo: lo - pad, hi: hi + pad });
        }
        Some(Self { lo, hi })
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

/// Renders `columns[1..]` against `columns[0]`. Empty fields are skipped;
/// non-finite values, and non-positive ones on a log axis, break the line.
/// `markers` are x positions drawn as dashed vertical lines.
pub fn render_svg(csv_text: &str, columns: &[&str], scales: Scales, markers: &[f64]) -> Result<String, CliError> {
    if columns.len() < 2 {
        return Err(CliError::Config("plot needs an x column and at least one y column".into()));
    }
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(io_err)?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| CliError::Config(format!("missing column `{c}`")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(io_err)?;
        rows.push(idx.iter().map(|&i| rec.get(i).and_then(|s| s.parse::<f64>().ok())).collect());
    }
    if rows.is_empty() {
        return Err(CliError::Config("cannot plot an empty CSV".into()));
    }

    let point = |row: &[Option<f64>], k: usize| -> Option<(f64, f64)> {
        Some((scales.x.map(row[0]?)?, scales.y.map(row[k]?)?))
    };
    let pts: Vec<(f64, f64)> = (1..columns.len())
        .flat_map(|k| rows.iter().filter_map(move |r| point(r, k)))
        .collect();
    let marker_xs: Vec<f64> = markers.iter().filter_map(|&m| scales.x.map(m)).collect();
    let fx = Frame::new(pts.iter().map(|p| p.0).chain(marker_xs.iter().copied()))
        .ok_or_else(|| CliError::Config("no plottable points".into()))?;
    let fy = Frame::new(pts.iter().map(|p| p.1)).ok_or_else(|| CliError::Config("no plottable points".into()))?;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + fx.frac(x) * plot_w;
    let sy = |y: f64| MARGIN_T + (1.0 - fy.frac(y)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let label = |axis: Axis, v: f64| match axis {
        Axis::Linear => format!("{v:.3e}"),
        Axis::Log => format!("1e{v:.2}"),
    };
    let bottom = MARGIN_T + plot_h;
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN_L}" y="{:.2}" font-size="11">{}</text>"#,
        bottom + 16.0,
        label(scales.x, fx.lo)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
        MARGIN_L + plot_w,
        bottom + 16.0,
        label(scales.x, fx.hi)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        bottom + 36.0,
        escape(columns[0])
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
        MARGIN_L - 4.0,
        bottom,
        label(scales.y, fy.lo)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
        MARGIN_L - 4.0,
        MARGIN_T + 10.0,
        label(scales.y, fy.hi)
    );

    for &m in &marker_xs {
        let x = sx(m);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{MARGIN_T}" x2="{x:.2}" y2="{bottom:.2}" stroke="gray" stroke-dasharray="4 3"/>"#
        );
    }

    for k in 1..columns.len() {
        let color = PALETTE[(k - 1) % PALETTE.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |segment: &mut Vec<String>, s: &mut String| {
            if !segment.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    segment.join(" ")
                );
                segment.clear();
            }
        };
        for row in &rows {
            if row[0].is_none() || row[k].is_none() {
                continue;
            }
            match point(row, k) {
                Some((x, y)) => segment.push(format!("{:.2},{:.2}", sx(x), sy(y))),
                None => flush(&mut segment, &mut s),
            }
        }
        flush(&mut segment, &mut s);
        let ly = MARGIN_T + 14.0 * k as f64;
        let lx = MARGIN_L + plot_w + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="11">{}</text>"#,
            lx + 22.0,
            escape(columns[k])
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the plot next to `csv_path` with an `.svg` extension.
pub fn emit_svg_lineplot(csv_path: &Path, columns: &[&str], scales: Scales) -> Result<PathBuf, CliError> {
    emit_with_markers(csv_path, columns, scales, &[])
}

pub fn emit_with_markers(csv_path: &Path, columns: &[&str], scales: Scales, markers: &[f64]) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(csv_path)?;
    let svg = render_svg(&text, columns, scales, markers)?;
    let out = csv_path.with_extension("svg");
    std::fs::write(&out, svg)?;
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn io_err(e: csv::Error) -> CliError {
    CliError::Config(format!("malformed CSV: {e}"))
}
