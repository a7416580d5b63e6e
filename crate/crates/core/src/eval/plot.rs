//! Standalone SVG line plots and bar charts with deterministic bytes.

use std::fmt::Write as _;

use crate::{Error, Result};

use super::table::Table;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str, (y0, y1): (f64, f64)) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));
    let (x1, yb) = (W - RIGHT, H - BOTTOM);
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{yb}" x2="{x1}" y2="{yb}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{yb}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + x1) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(out, r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#, (TOP + yb) / 2.0, escape(ylabel));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, LEFT - 4.0, yb, y0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, LEFT - 4.0, TOP + 10.0, y1);
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 16.0 * i as f64 + 6.0;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/>"#, x + 18.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 24.0, y + 4.0, escape(n));
    }
}

/// One polyline per series, with a legend.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.x.is_empty()) {
        return Err(Error::Config("nothing to plot".into()));
    }
    for s in series {
        if s.x.len() != s.y.len() {
            return Err(Error::LengthMismatch(s.x.len(), s.y.len()));
        }
    }
    let xr = range(series.iter().flat_map(|s| s.x.iter().copied()));
    let yr = range(series.iter().flat_map(|s| s.y.iter().copied()));
    let sx = |v: f64| LEFT + (v - xr.0) / (xr.1 - xr.0) * (W - RIGHT - LEFT);
    let sy = |v: f64| H - BOTTOM - (v - yr.0) / (yr.1 - yr.0) * (H - BOTTOM - TOP);
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, yr);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, PALETTE[i % PALETTE.len()], pts.join(" "));
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Grouped bars: one group per category, one bar per series within it.
pub fn bar_chart(title: &str, ylabel: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> Result<String> {
    if categories.is_empty() || series.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    for (_, v) in series {
        if v.len() != categories.len() {
            return Err(Error::LengthMismatch(v.len(), categories.len()));
        }
    }
    let top = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let yr = (0.0, if top > 0.0 { top } else { 1.0 });
    let mut out = String::new();
    header(&mut out, title, "", ylabel, yr);
    let group = (W - RIGHT - LEFT) / categories.len() as f64;
    let bar = group * 0.8 / series.len() as f64;
    for (ci, cat) in categories.iter().enumerate() {
        let gx = LEFT + group * ci as f64 + group * 0.1;
        for (si, (_, v)) in series.iter().enumerate() {
            let val = if v[ci].is_finite() { v[ci].max(0.0) } else { 0.0 };
            let h = val / yr.1 * (H - BOTTOM - TOP);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                gx + bar * si as f64,
                H - BOTTOM - h,
                bar,
                h,
                PALETTE[si % PALETTE.len()]
            );
        }
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, gx + group * 0.4, H - BOTTOM + 14.0, escape(cat));
    }
    legend(&mut out, &series.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Columns of a numeric table as series against its first column. A column
/// named `lr` is skipped so loss curves stay readable.
pub fn table_series(t: &Table) -> Result<Vec<Series>> {
    if t.rows.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let x: Vec<f64> = (0..t.rows.len()).map(|r| t.get_f64(r, 0)).collect::<Result<_>>()?;
    (1..t.header.len())
        .filter(|&c| t.header[c] != "lr")
        .map(|c| {
            let y = (0..t.rows.len()).map(|r| t.get_f64(r, c)).collect::<Result<_>>()?;
            Ok(Series { name: t.header[c].clone(), x: x.clone(), y })
        })
        .collect()
}

/// Renders a CSV: benchmark tables (`method,scenario,mae,...`) as MAE bar
/// charts, anything else as line plots against the first column.
pub fn plot_table(t: &Table, title: &str) -> Result<String> {
    if t.header.first().map(String::as_str) == Some("method") && t.header.get(1).map(String::as_str) == Some("scenario") {
        let mae = t.column("mae")?;
        let mut cats: Vec<String> = Vec::new();
        let mut scen: Vec<String> = Vec::new();
        for r in &t.rows {
            if !cats.contains(&r[0]) {
                cats.push(r[0].clone());
            }
            if !scen.contains(&r[1]) {
                scen.push(r[1].clone());
            }
        }
        let mut series = Vec::new();
        for s in &scen {
            let vals = cats
                .iter()
                .map(|c| {
                    t.rows.iter().position(|r| &r[0] == c && &r[1] == s).map_or(Ok(f64::NAN), |i| t.get_f64(i, mae))
                })
                .collect::<Result<Vec<_>>>()?;
            series.push((s.clone(), vals));
        }
        bar_chart(title, "MAE (bpm)", &cats, &series)
    } else {
        line_plot(title, &t.header[0], "value", &table_series(t)?)
    }
}
