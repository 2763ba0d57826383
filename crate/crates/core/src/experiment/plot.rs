use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::VERSION;
use crate::error::{Error, Result};

/// One dimension of a sweep: mean and spread of the distance to the min-norm
/// solution, and the mean of the per-seed bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub d: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

pub(crate) fn write_aggregate<W: Write>(rows: &[AggregateRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    if rows.is_empty() {
        wtr.write_record(["d", "mean_error", "std_error", "lower_bound", "upper_bound"])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_aggregate<R: Read>(r: R) -> Result<Vec<AggregateRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()
        .map_err(|e| Error::Schema(format!("aggregate: {e}")))?;
    if rows.is_empty() {
        return Err(Error::Schema("aggregate has no rows".into()));
    }
    Ok(rows)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 64.0;

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, d: f64) -> f64 {
        MARGIN + (d.log10() - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v.log10() - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], ax: &Axes, style: &str) {
    let coords: Vec<String> = pts.iter().map(|&(d, v)| format!("{:.2},{:.2}", ax.px(d), ax.py(v))).collect();
    let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, coords.join(" "));
}

/// Log-log SVG of error against dimension with the bound envelopes and a
/// slope −½ guide through the first mean.
pub fn render_svg(rows: &[AggregateRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if rows.iter().any(|r| r.d == 0 || !positive(r.mean_error) || !positive(r.lower_bound) || !positive(r.upper_bound))
    {
        return Err(Error::InvalidArgument("log-log plot needs positive, finite values".into()));
    }
    let ds: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();
    let mut ys: Vec<f64> = rows.iter().flat_map(|r| [r.mean_error, r.lower_bound, r.upper_bound]).collect();
    ys.extend(rows.iter().map(|r| r.mean_error - r.std_error).filter(|v| *v > 0.0));
    ys.extend(rows.iter().map(|r| r.mean_error + r.std_error));
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min).log10();
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10();
        if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
        }
    };
    let ax = Axes { x: span(&ds), y: span(&ys) };

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, "<!-- relubias {VERSION} -->");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ =
        writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for r in rows {
        let x = ax.px(r.d as f64);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 16.0, r.d);
    }
    let (ylo, yhi) = ax.y;
    for e in (ylo.ceil() as i32)..=(yhi.floor() as i32) {
        let y = ax.py(10f64.powi(e));
        let _ = writeln!(s, r#"<text x="{}" y="{y:.2}" text-anchor="end">1e{e}</text>"#, x0 - 6.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">d</text>"#, (x0 + x1) / 2.0, HEIGHT - 20.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">distance to min-norm solution</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    let lower: Vec<(f64, f64)> = rows.iter().map(|r| (r.d as f64, r.lower_bound)).collect();
    let upper: Vec<(f64, f64)> = rows.iter().map(|r| (r.d as f64, r.upper_bound)).collect();
    polyline(&mut s, &lower, &ax, r#"stroke="steelblue" stroke-dasharray="6,4""#);
    polyline(&mut s, &upper, &ax, r#"stroke="firebrick" stroke-dasharray="6,4""#);
    let first = rows[0];
    let guide: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.d as f64, first.mean_error * (r.d as f64 / first.d as f64).powf(-0.5))).collect();
    polyline(&mut s, &guide, &ax, r#"stroke="gray" stroke-dasharray="2,3""#);
    let means: Vec<(f64, f64)> = rows.iter().map(|r| (r.d as f64, r.mean_error)).collect();
    polyline(&mut s, &means, &ax, r#"stroke="black""#);
    for r in rows {
        let x = ax.px(r.d as f64);
        let lo = (r.mean_error - r.std_error).max(10f64.powf(ax.y.0));
        let hi = r.mean_error + r.std_error;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            ax.py(lo),
            ax.py(hi)
        );
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3.5" fill="black"/>"#, ax.py(r.mean_error));
    }

    let legend = [
        ("black", "", "mean ± std"),
        ("firebrick", r#" stroke-dasharray="6,4""#, "upper bound"),
        ("steelblue", r#" stroke-dasharray="6,4""#, "lower bound"),
        ("gray", r#" stroke-dasharray="2,3""#, "slope −1/2"),
    ];
    for (j, (color, dash, label)) in legend.iter().enumerate() {
        let y = y0 + 16.0 + 16.0 * j as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}"{dash}/><text x="{}" y="{}">{label}</text>"#,
            x1 - 150.0,
            x1 - 120.0,
            x1 - 114.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Read an aggregate CSV and write its SVG.
pub fn emit_plot(csv_path: &Path, out: &Path) -> Result<()> {
    let rows = read_aggregate(fs::File::open(csv_path)?)?;
    fs::write(out, render_svg(&rows)?)?;
    Ok(())
}
