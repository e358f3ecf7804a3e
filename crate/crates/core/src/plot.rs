//! Line charts of sweep results as standalone SVG.
//!
//! Output is a pure function of the rows: fixed canvas, fixed palette, numbers
//! printed with fixed precision.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{summarize, ResultRow, Scenario};
use crate::selectors::ModelKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    Gap,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn color(kind: ModelKind) -> &'static str {
    PALETTE[ModelKind::ALL.iter().position(|k| *k == kind).expect("listed")]
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}").trim_end_matches('0').to_string()
    }
}

/// One series per model kind, x = sweep value, y = mean metric, error bars = stddev.
pub fn plot_svg(rows: &[ResultRow], scenario: Scenario, metric: Metric) -> Result<String> {
    let rows: Vec<ResultRow> = rows.iter().filter(|r| r.scenario == scenario).cloned().collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("no rows for scenario {}", scenario.name())));
    }
    let summary = summarize(&rows)?;
    let point = |r: &crate::experiments::SummaryRow| match metric {
        Metric::Accuracy => (r.sweep_value, r.accuracy_mean, r.accuracy_std),
        Metric::Gap => (r.sweep_value, r.gap_mean, r.gap_std),
    };
    let pts: Vec<(f64, f64, f64)> = summary.rows.iter().map(point).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, s) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - s);
        y1 = y1.max(y + s);
    }
    if metric == Metric::Accuracy {
        y0 = y0.max(0.0).min(y1);
        y1 = y1.min(1.0).max(y0);
    }
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.05;
        y1 += 0.05;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let label = match metric {
        Metric::Accuracy => "test accuracy",
        Metric::Gap => "generalization gap",
    };
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} ({label})</text>"#, fmt(LEFT + pw / 2.0), scenario.name()).unwrap();
    writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fmt(LEFT),
        fmt(TOP),
        fmt(pw),
        fmt(ph)
    )
    .unwrap();
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in &xs {
        let px = fmt(sx(*x));
        writeln!(s, r#"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="black"/>"#, fmt(TOP + ph), fmt(TOP + ph + 5.0)).unwrap();
        writeln!(s, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, fmt(TOP + ph + 18.0), tick_label(*x)).unwrap();
    }
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let py = fmt(sy(y));
        writeln!(s, r#"<line x1="{}" y1="{py}" x2="{}" y2="{py}" stroke="black"/>"#, fmt(LEFT - 5.0), fmt(LEFT)).unwrap();
        writeln!(s, r#"<text x="{}" y="{py}" text-anchor="end" dominant-baseline="middle">{y:.3}</text>"#, fmt(LEFT - 8.0)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">sweep value</text>"#, fmt(LEFT + pw / 2.0), fmt(H - 15.0)).unwrap();

    let kinds: Vec<ModelKind> = ModelKind::ALL
        .into_iter()
        .filter(|k| summary.rows.iter().any(|r| r.model == *k))
        .collect();
    for (li, kind) in kinds.iter().enumerate() {
        let c = color(*kind);
        let series: Vec<(f64, f64, f64)> = summary.rows.iter().filter(|r| r.model == *kind).map(point).collect();
        writeln!(s, r#"<g class="series" data-model="{kind}" stroke="{c}" fill="{c}">"#).unwrap();
        if series.len() > 1 {
            let path: Vec<String> = series.iter().map(|(x, y, _)| format!("{},{}", fmt(sx(*x)), fmt(sy(*y)))).collect();
            writeln!(s, r#"<polyline fill="none" stroke-width="2" points="{}"/>"#, path.join(" ")).unwrap();
        }
        for (x, y, sd) in &series {
            let (px, py) = (fmt(sx(*x)), fmt(sy(*y)));
            if *sd > 0.0 {
                writeln!(s, r#"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke-width="1"/>"#, fmt(sy(y - sd)), fmt(sy(y + sd))).unwrap();
            }
            writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3.5"/>"#).unwrap();
        }
        writeln!(s, "</g>").unwrap();
        let ly = TOP + 10.0 + 20.0 * li as f64;
        let lx = W - RIGHT + 15.0;
        writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{c}" stroke-width="2"/>"#, fmt(lx), fmt(ly), fmt(lx + 20.0), fmt(ly)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" dominant-baseline="middle">{kind}</text>"#, fmt(lx + 26.0), fmt(ly)).unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}
