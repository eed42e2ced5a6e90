//! CSV tables and an SVG chart of reachability curves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::aggregate::AggregateReport;
use crate::error::{Error, Result};
use crate::trace::write_atomic;

pub const CURVES_CSV: &str = "reachability.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CHART_SVG: &str = "reachability.svg";

#[derive(Serialize)]
struct CurveRow<'a> {
    algorithm: &'a str,
    iteration: usize,
    mean_reach: f64,
    std_reach: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    algorithm: &'a str,
    replicates: usize,
    final_mean: f64,
    final_std: f64,
    final_min: f64,
    final_max: f64,
}

/// Columns `algorithm, iteration, mean_reach, std_reach`; one row per
/// algorithm and query.
pub fn curves_csv(report: &AggregateReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &report.curves {
        for (i, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
            w.serialize(CurveRow {
                algorithm: &c.algorithm,
                iteration: i,
                mean_reach: *m,
                std_reach: *s,
            })?;
        }
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

/// Final-iteration table, one row per algorithm.
pub fn summary_csv(report: &AggregateReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &report.curves {
        w.serialize(SummaryRow {
            algorithm: &c.algorithm,
            replicates: c.replicates,
            final_mean: c.final_mean(),
            final_std: c.final_std(),
            final_min: c.finals.iter().copied().fold(f64::INFINITY, f64::min),
            final_max: c.finals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Line chart of mean reachability per algorithm with a shaded ±1 standard
/// deviation band, clipped to [0, 1].
pub fn render_svg(report: &AggregateReport) -> String {
    let (w, h) = (760.0, 460.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let len = report.n_init + report.iterations;
    let xmax = (len.max(2) - 1) as f64;
    let sx = |i: f64| left + pw * i / xmax;
    let sy = |r: f64| top + ph * (1.0 - r.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(&format!("{} ({} bins)", report.problem, report.num_bins))
    );
    for k in 0..=5 {
        let r = k as f64 / 5.0;
        let y = sy(r);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{r:.1}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    let step = nice_step(xmax);
    let mut tick = 0.0;
    while tick <= xmax + 1e-9 {
        let x = sx(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{tick}</text>"##,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0
        );
        tick += step;
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">iterations</text>"#,
        left + pw / 2.0,
        h - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {}) rotate(-90)" text-anchor="middle">reachability</text>"#,
        top + ph / 2.0
    );

    for (ci, c) in report.curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let upper = c.mean.iter().zip(&c.std).enumerate().map(|(i, (m, sd))| (sx(i as f64), sy(m + sd)));
        let lower = c.mean.iter().zip(&c.std).enumerate().rev().map(|(i, (m, sd))| (sx(i as f64), sy(m - sd)));
        let band: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = c.mean.iter().enumerate().map(|(i, m)| format!("{:.2},{:.2}", sx(i as f64), sy(*m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = top + 14.0 + 20.0 * ci as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&format!("{} (R={})", c.algorithm, c.replicates))
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Paths written by [`write_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub curves: PathBuf,
    pub summary: PathBuf,
    pub chart: PathBuf,
}

/// Writes the curve CSV, the summary CSV and the SVG chart into `dir`.
pub fn write_report(report: &AggregateReport, dir: &Path) -> Result<ReportFiles> {
    if report.curves.is_empty() {
        return Err(Error::Mixed("nothing to report".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        curves: dir.join(CURVES_CSV),
        summary: dir.join(SUMMARY_CSV),
        chart: dir.join(CHART_SVG),
    };
    let curves = curves_csv(report)?;
    let summary = summary_csv(report)?;
    let chart = render_svg(report);
    write_atomic(&files.curves, |w| std::io::Write::write_all(w, &curves))?;
    write_atomic(&files.summary, |w| std::io::Write::write_all(w, &summary))?;
    write_atomic(&files.chart, |w| std::io::Write::write_all(w, chart.as_bytes()))?;
    Ok(files)
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.max(1.0).log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag).max(1.0)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
