//! Figures as CSV + SVG. Rendering is plain string formatting with fixed
//! precision so the same data always produces the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::results::Results;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub name: String,
    pub title: String,
    /// Label for the row axis (drawn vertically on the left).
    pub row_label: String,
    /// Label for the column axis (drawn along the bottom).
    pub col_label: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// `values[r][c]`; `None` cells are drawn grey.
    pub values: Vec<Vec<Option<f64>>>,
    /// Colour scale; taken from the data when absent.
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Figure {
    Heatmap(Heatmap),
    Lines(LineChart),
}

impl Figure {
    pub fn name(&self) -> &str {
        match self {
            Figure::Heatmap(h) => &h.name,
            Figure::Lines(l) => &l.name,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Figure::Heatmap(h) => {
                if h.rows.is_empty() || h.cols.is_empty() {
                    return Err(CliError::Report(format!("{}: empty matrix", h.name)));
                }
                if h.values.len() != h.rows.len() || h.values.iter().any(|r| r.len() != h.cols.len()) {
                    return Err(CliError::Report(format!("{}: values do not match the tick labels", h.name)));
                }
            }
            Figure::Lines(l) => {
                if l.series.is_empty() {
                    return Err(CliError::Report(format!("{}: no series", l.name)));
                }
                // absent values are fine (empty strata); a series with no x positions is not
                if let Some(s) = l.series.iter().find(|s| s.points.is_empty()) {
                    return Err(CliError::Report(format!("{}: series {:?} has no points", l.name, s.name)));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        match self {
            Figure::Heatmap(h) => {
                writeln!(out, "{},{},value", csv_field(&h.row_label), csv_field(&h.col_label)).unwrap();
                for (r, row) in h.rows.iter().enumerate() {
                    for (c, col) in h.cols.iter().enumerate() {
                        writeln!(out, "{},{},{}", csv_field(row), csv_field(col), fmt_opt(h.values[r][c])).unwrap();
                    }
                }
            }
            Figure::Lines(l) => {
                writeln!(out, "series,{},{}", csv_field(&l.x_label), csv_field(&l.y_label)).unwrap();
                for s in &l.series {
                    for &(x, y) in &s.points {
                        writeln!(out, "{},{},{}", csv_field(&s.name), x, fmt_opt(y)).unwrap();
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_svg(&self) -> Result<String> {
        self.validate()?;
        Ok(match self {
            Figure::Heatmap(h) => heatmap_svg(h),
            Figure::Lines(l) => lines_svg(l),
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

// viridis, sampled at five stops
const STOPS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn data_range(h: &Heatmap) -> (f64, f64) {
    if let Some(r) = h.range {
        return r;
    }
    let vals: Vec<f64> = h.values.iter().flatten().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match (lo.is_finite(), lo < hi) {
        (false, _) => (0.0, 1.0),
        (true, true) => (lo, hi),
        (true, false) => (lo - 0.5, hi + 0.5),
    }
}

/// Every `step`-th tick label so at most ~20 are printed.
fn tick_step(n: usize) -> usize {
    n.div_ceil(20).max(1)
}

fn heatmap_svg(h: &Heatmap) -> String {
    let (nr, nc) = (h.rows.len(), h.cols.len());
    let cell = (400.0 / nr.max(nc) as f64).clamp(2.0, 60.0);
    let (left, top) = (110.0, 50.0);
    let (w, hgt) = (nc as f64 * cell, nr as f64 * cell);
    let bar_x = left + w + 30.0;
    let width = bar_x + 90.0;
    let height = top + hgt + 70.0;
    let (lo, hi) = data_range(h);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="24" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, esc(&h.title)).unwrap();
    writeln!(s, r#"<g id="cells">"#).unwrap();
    for r in 0..nr {
        for c in 0..nc {
            let (x, y) = (left + c as f64 * cell, top + r as f64 * cell);
            let fill = match h.values[r][c] {
                Some(v) if v.is_finite() => colour((v - lo) / (hi - lo)),
                _ => "#bbbbbb".to_string(),
            };
            writeln!(
                s,
                r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}"><title>{} / {}: {}</title></rect>"#,
                esc(&h.rows[r]),
                esc(&h.cols[c]),
                fmt_opt(h.values[r][c])
            )
            .unwrap();
        }
    }
    writeln!(s, "</g>").unwrap();
    if cell >= 28.0 {
        for r in 0..nr {
            for c in 0..nc {
                if let Some(v) = h.values[r][c] {
                    let t = (v - lo) / (hi - lo);
                    let ink = if t > 0.6 { "black" } else { "white" };
                    writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" dominant-baseline="middle" fill="{ink}" font-size="9">{v:.2}</text>"#,
                        left + (c as f64 + 0.5) * cell,
                        top + (r as f64 + 0.5) * cell
                    )
                    .unwrap();
                }
            }
        }
    }
    for r in (0..nr).step_by(tick_step(nr)) {
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            left - 4.0,
            top + (r as f64 + 0.5) * cell,
            esc(&h.rows[r])
        )
        .unwrap();
    }
    for c in (0..nc).step_by(tick_step(nc)) {
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            left + (c as f64 + 0.5) * cell,
            top + hgt + 14.0,
            esc(&h.cols[c])
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text class="axis-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + w / 2.0,
        top + hgt + 40.0,
        esc(&h.col_label)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text class="axis-label" x="24" y="{:.2}" text-anchor="middle" transform="rotate(-90 24 {:.2})">{}</text>"#,
        top + hgt / 2.0,
        top + hgt / 2.0,
        esc(&h.row_label)
    )
    .unwrap();

    let steps = 32;
    let step_h = hgt.max(120.0) / steps as f64;
    writeln!(s, r#"<g id="colorbar">"#).unwrap();
    for i in 0..steps {
        // top of the bar is the high end
        let t = 1.0 - (i as f64 + 0.5) / steps as f64;
        writeln!(
            s,
            r#"<rect class="colorbar-step" x="{bar_x:.2}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            top + i as f64 * step_h,
            step_h + 0.01,
            colour(t)
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" dominant-baseline="middle">{}</text>"#, bar_x + 20.0, top + 4.0, short(hi)).unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" dominant-baseline="middle">{}</text>"#,
        bar_x + 20.0,
        top + steps as f64 * step_h - 4.0,
        short(lo)
    )
    .unwrap();
    writeln!(s, "</g>").unwrap();
    s.push_str("</svg>\n");
    s
}

fn short(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if lo < hi {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn lines_svg(l: &LineChart) -> String {
    let pts: Vec<(f64, f64)> = l
        .series
        .iter()
        .flat_map(|s| s.points.iter().filter_map(|&(x, y)| y.map(|y| (x, y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let xs = pts.iter().map(|p| p.0);
    let ys = pts.iter().map(|p| p.1);
    let (x0, x1) = nice_range(xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = nice_range(ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    let (left, top, pw, ph) = (70.0, 40.0, 460.0, 280.0);
    let (width, height) = (left + pw + 150.0, top + ph + 60.0);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#, left + pw / 2.0, esc(&l.title)).unwrap();
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 14.0,
            short(xv)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            left - 4.0,
            sy(yv),
            short(yv)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text class="axis-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        top + ph + 36.0,
        esc(&l.x_label)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text class="axis-label" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        esc(&l.y_label)
    )
    .unwrap();
    for (i, series) in l.series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for &(x, y) in &series.points {
            match y {
                Some(y) if y.is_finite() && x.is_finite() => {
                    write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y)).unwrap();
                    pen_down = true;
                }
                // gaps break the line
                _ => pen_down = false,
            }
        }
        writeln!(
            s,
            r#"<path class="series" d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            path.trim_end()
        )
        .unwrap();
        for &(x, y) in &series.points {
            if let Some(y) = y.filter(|y| y.is_finite()) {
                writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#, sx(x), sy(y)).unwrap();
            }
        }
        let ly = top + 10.0 + i as f64 * 16.0;
        writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}" dominant-baseline="middle">{}</text>"#,
            left + pw + 12.0,
            left + pw + 30.0,
            left + pw + 34.0,
            esc(&series.name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `{name}.csv` and `{name}.svg` for every figure.
pub fn write_figures(dir: &Path, figures: &[Figure]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for fig in figures {
        for (ext, body) in [("csv", fig.to_csv()?), ("svg", fig.to_svg()?)] {
            let path = dir.join(format!("{}.{ext}", fig.name()));
            fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Re-renders every figure of a result directory from its results.json.
pub fn render_report(results_dir: &Path) -> Result<Vec<PathBuf>> {
    let path = results_dir.join(crate::rundir::RESULTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))?;
    let results = Results::from_json(value)?;
    write_figures(results_dir, &results.figures()?)
}
