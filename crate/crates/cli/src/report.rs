//! Aggregation of finished runs into a summary table and an SVG line chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ncgl::error::Error;
use ncgl::training::read_metric_log;
use ncgl::Result;
use serde::Serialize;

use crate::manifest::read_manifest;

#[derive(Debug, Clone, PartialEq)]
pub struct RunPoint {
    pub log: PathBuf,
    pub variant: String,
    pub noise: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub noise: f64,
    pub runs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    GenLabelAcc,
    MError,
    RecoveryAcc,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::GenLabelAcc => "generator label accuracy",
            Metric::MError => "confusion matrix error",
            Metric::RecoveryAcc => "label recovery accuracy",
        }
    }
}

/// Reads one metric log and the `manifest.json` beside it. `None` when the
/// file is not a run log or the run lacks the metric.
pub fn load_point(log: &Path, metric: Metric) -> Result<Option<RunPoint>> {
    let Ok(rows) = read_metric_log(log) else { return Ok(None) };
    let Some(last) = rows.last() else { return Ok(None) };
    let manifest_path = log.with_file_name("manifest.json");
    if !manifest_path.exists() {
        return Ok(None);
    }
    let man = read_manifest(&manifest_path)?;
    let value = match metric {
        Metric::GenLabelAcc => Some(man.gen_label_acc),
        Metric::MError => man.m_error,
        Metric::RecoveryAcc => man.recovery_acc,
    };
    Ok(value.map(|value| RunPoint {
        log: log.to_path_buf(),
        variant: last.variant.to_string(),
        noise: 1.0 - man.label_accuracy,
        value,
    }))
}

/// Groups by (variant, noise level); rows sorted by variant then noise.
pub fn summarize(points: &[RunPoint]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    for p in points {
        // Key on the noise level rounded to 1e-9 so equal levels group.
        let key = (p.variant.clone(), (p.noise * 1e9).round() as i64);
        groups.entry(key).or_default().push(p.value);
    }
    groups
        .into_iter()
        .map(|((variant, n), vals)| SummaryRow {
            variant,
            noise: n as f64 / 1e9,
            runs: vals.len(),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::from)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of the group means: noise level on x, metric on y, one series
/// per variant.
pub fn render_svg(rows: &[SummaryRow], metric: Metric) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let mut x_lo = rows.iter().map(|r| r.noise).fold(f64::INFINITY, f64::min);
    let mut x_hi = rows.iter().map(|r| r.noise).fold(f64::NEG_INFINITY, f64::max);
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (0.0, 1.0);
    }
    if x_hi - x_lo < 1e-9 {
        (x_lo, x_hi) = (x_lo - 0.05, x_hi + 0.05);
    }
    let y_hi = rows.iter().map(|r| r.mean).fold(1.0, f64::max);
    let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| top + (1.0 - y / y_hi) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} vs label noise</text>"#, left + pw / 2.0, metric.label());
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (xv, yv) = (x_lo + t * (x_hi - x_lo), t * y_hi);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(s, r##"<line x1="{px:.1}" y1="{top}" x2="{px:.1}" y2="{:.1}" stroke="#eee"/>"##, top + ph);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#eee"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#, top + ph + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#, left - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">label noise (1 − π)</text>"#, left + pw / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        metric.label()
    );

    let mut series: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        series.entry(r.variant.as_str()).or_default().push(r);
    }
    for (k, (name, pts)) in series.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.noise.total_cmp(&b.noise));
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|r| format!("{:.1},{:.1}", sx(r.noise), sy(r.mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for r in pts.iter() {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, sx(r.noise), sy(r.mean));
        }
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
