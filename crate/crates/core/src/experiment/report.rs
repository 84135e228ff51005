use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::Regime;
use super::run::{Epsilon, RunRecord, RunStatus};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::{group_labels, METRICS};

/// Mean and sample standard deviation of one metric for one group at one
/// budget point, across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub model: String,
    pub regime: Regime,
    pub budget: Option<f64>,
    /// Mean realized epsilon of the contributing runs.
    pub realized_epsilon: Epsilon,
    pub metric: String,
    pub group: String,
    pub mean: f64,
    /// Undefined for a single run.
    pub std: Option<f64>,
    pub n: usize,
    /// Failed runs at this point.
    pub failed: usize,
}

fn regime_rank(r: Regime) -> u8 {
    match r {
        Regime::None => 0,
        Regime::Dpsgd => 1,
        Regime::Ldp => 2,
    }
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Aggregates per (dataset, model, regime, budget, metric, group).
/// Points are ordered baseline first, then by regime and budget.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut points: Vec<&RunRecord> = Vec::new();
    for r in records {
        if !points.iter().any(|p| same_point(p, r)) {
            points.push(r);
        }
    }
    points.sort_by(|a, b| {
        (&a.dataset, &a.model, regime_rank(a.regime))
            .cmp(&(&b.dataset, &b.model, regime_rank(b.regime)))
            .then(a.budget.unwrap_or(0.0).total_cmp(&b.budget.unwrap_or(0.0)))
    });
    let mut rows = Vec::new();
    for metric in METRICS {
        for p in &points {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| same_point(p, r)).collect();
            let ok: Vec<&RunRecord> = runs.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
            let failed = runs.len() - ok.len();
            let eps: Vec<f64> = ok.iter().map(|r| r.realized_epsilon.0).collect();
            let realized = if eps.is_empty() { f64::NAN } else { mean_std(&eps).0 };
            for group in group_labels() {
                let values: Vec<f64> = ok
                    .iter()
                    .filter_map(|r| r.metrics.as_ref()?.group_value(group, metric))
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&values);
                rows.push(AggregateRow {
                    dataset: p.dataset.clone(),
                    model: p.model.clone(),
                    regime: p.regime,
                    budget: p.budget,
                    realized_epsilon: Epsilon(realized),
                    metric: metric.to_string(),
                    group: group.to_string(),
                    mean,
                    std,
                    n: values.len(),
                    failed,
                });
            }
        }
    }
    rows
}

fn same_point(a: &RunRecord, b: &RunRecord) -> bool {
    a.dataset == b.dataset
        && a.model == b.model
        && a.config_fingerprint == b.config_fingerprint
        && a.regime == b.regime
        && a.budget == b.budget
}

/// Report artifacts as (relative file name, contents).
#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub csv: Vec<(String, String)>,
    pub svg: Vec<(String, String)>,
}

pub const CSV_HEADER: &str = "dataset,model,regime,budget,realized_epsilon,group,mean,std,n";

fn fmt_eps(e: Epsilon) -> String {
    if e.0.is_finite() {
        format!("{}", e.0)
    } else {
        "inf".into()
    }
}

/// Builds one CSV per metric and one chart per (metric, dataset, model).
pub fn report(records: &[RunRecord]) -> Result<ReportFiles> {
    if !records.iter().any(|r| r.status == RunStatus::Ok) {
        return Err(Error::invalid("no successful run records to report"));
    }
    let rows = aggregate(records);
    let mut files = ReportFiles::default();
    for metric in METRICS {
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        for r in rows.iter().filter(|r| r.metric == metric) {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.model,
                r.regime.as_str(),
                r.budget.map(|b| b.to_string()).unwrap_or_default(),
                fmt_eps(r.realized_epsilon),
                r.group,
                r.mean,
                r.std.map(|s| s.to_string()).unwrap_or_default(),
                r.n
            );
        }
        files.csv.push((format!("{metric}.csv"), csv));

        let mut panels: BTreeMap<(String, String), Vec<&AggregateRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.metric == metric && r.group == "all") {
            panels.entry((r.dataset.clone(), r.model.clone())).or_default().push(r);
        }
        for ((dataset, model), panel) in panels {
            files.svg.push((
                format!("{metric}_{dataset}_{model}.svg"),
                chart(&format!("{metric}: {model} on {dataset}"), &panel),
            ));
        }
    }
    Ok(files)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn colour(regime: Regime) -> &'static str {
    match regime {
        Regime::Dpsgd => "#1f77b4",
        Regime::Ldp => "#d62728",
        Regime::None => "#555555",
    }
}

/// Metric mean (with a one-std bar) against realized epsilon on a log
/// axis. The baseline is a dashed horizontal line.
fn chart(title: &str, rows: &[&AggregateRow]) -> String {
    let points: Vec<&AggregateRow> = rows
        .iter()
        .copied()
        .filter(|r| r.regime != Regime::None && r.realized_epsilon.0.is_finite() && r.realized_epsilon.0 > 0.0)
        .collect();
    let baseline = rows.iter().find(|r| r.regime == Regime::None);

    let xs: Vec<f64> = points.iter().map(|r| r.realized_epsilon.0.log10()).collect();
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (-1.0, 1.0);
    }
    x0 = x0.floor();
    x1 = x1.ceil().max(x0 + 1.0);

    let mut ys: Vec<f64> = Vec::new();
    for r in &points {
        let s = r.std.unwrap_or(0.0);
        ys.extend([r.mean - s, r.mean + s]);
    }
    if let Some(b) = baseline {
        ys.push(b.mean);
    }
    let (mut y0, mut y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.1).max(1e-3);
    y0 -= pad;
    y1 += pad;

    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    // axes
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        b = H - BOTTOM,
        r = W - RIGHT
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}" stroke="black"/>"#,
        b = H - BOTTOM
    );
    let mut d = x0 as i32;
    while d as f64 <= x1 {
        let x = px(d as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{b}" x2="{x:.1}" y2="{b2}" stroke="black"/><text x="{x:.1}" y="{t}" text-anchor="middle">1e{d}</text>"#,
            b = H - BOTTOM,
            b2 = H - BOTTOM + 5.0,
            t = H - BOTTOM + 18.0
        );
        d += 1;
    }
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            LEFT - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">realized epsilon (log scale)</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );

    if let Some(b) = baseline {
        let y = py(b.mean);
        let _ = writeln!(
            s,
            r#"<line class="baseline" x1="{LEFT}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="{c}" stroke-dasharray="6 4"/>"#,
            r = W - RIGHT,
            c = colour(Regime::None)
        );
    }

    for regime in [Regime::Dpsgd, Regime::Ldp] {
        let mut series: Vec<&AggregateRow> = points.iter().copied().filter(|r| r.regime == regime).collect();
        if series.is_empty() {
            continue;
        }
        series.sort_by(|a, b| a.realized_epsilon.0.total_cmp(&b.realized_epsilon.0));
        let c = colour(regime);
        let path: Vec<String> = series
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.realized_epsilon.0.log10()), py(r.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" points="{}" fill="none" stroke="{c}"/>"#,
            path.join(" ")
        );
        for r in series {
            let x = px(r.realized_epsilon.0.log10());
            if let Some(sd) = r.std {
                let _ = writeln!(
                    s,
                    r#"<line class="errorbar" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/>"#,
                    py(r.mean - sd),
                    py(r.mean + sd)
                );
            }
            let _ = writeln!(
                s,
                r#"<circle class="marker" cx="{x:.2}" cy="{:.2}" r="4" fill="{c}"><title>{} budget {}: {:.4}</title></circle>"#,
                py(r.mean),
                regime.as_str(),
                r.budget.unwrap_or(f64::NAN),
                r.mean
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `reports/*.csv` and `reports/*.svg` under `output`.
pub fn write_reports(output: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    let files = report(records)?;
    let dir = output.join("reports");
    let mut written = Vec::new();
    for (name, body) in files.csv.iter().chain(&files.svg) {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    let agg = serde_json::to_vec_pretty(&aggregate(records))?;
    let path = dir.join("aggregate.json");
    write_atomic(&path, &agg)?;
    written.push(path);
    Ok(written)
}
