//! Per-round summaries across replicates and their two-panel SVG.
//!
//! Each arm (strategy for plain runs, ablation tag otherwise) becomes one
//! line: the mean over replicates with a band of one population standard
//! deviation. The summary CSV holds exactly the plotted numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::activeloop::{median, population_std};
use crate::error::{Error, Result};

use super::record::{write_text, MetricRow};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.svg";

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub round: usize,
    pub replicates: usize,
    pub observed_pairs: usize,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub coverage_median: f64,
    /// Replicates with a defined MAE (none once the pair space is exhausted).
    pub mae_replicates: usize,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub strategy: String,
    pub ablation: String,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn label(&self) -> &str {
        if self.ablation == "none" {
            &self.strategy
        } else {
            &self.ablation
        }
    }

    pub fn last(&self) -> &CurvePoint {
        self.points.last().expect("curves have at least one point")
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Groups rows by arm (in first-appearance order) and round.
pub fn summarize(rows: &[MetricRow]) -> Result<Vec<Curve>> {
    if rows.is_empty() {
        return Err(Error::Precondition("no metric rows to summarize".into()));
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, Vec<&MetricRow>>> = BTreeMap::new();
    for row in rows {
        let key = (row.strategy.clone(), row.ablation.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().entry(row.round).or_default().push(row);
    }
    let curves = order
        .into_iter()
        .map(|key| {
            let rounds = &groups[&key];
            let points = rounds
                .iter()
                .map(|(&round, rs)| {
                    let cov: Vec<f64> = rs.iter().map(|r| r.coverage_at_k).collect();
                    let mae: Vec<f64> = rs.iter().filter_map(|r| r.mae_unseen).collect();
                    CurvePoint {
                        round,
                        replicates: rs.len(),
                        observed_pairs: rs[0].observed_pairs,
                        coverage_mean: mean(&cov),
                        coverage_std: population_std(&cov),
                        coverage_median: median(&cov),
                        mae_replicates: mae.len(),
                        mae_mean: (!mae.is_empty()).then(|| mean(&mae)),
                        mae_std: (!mae.is_empty()).then(|| population_std(&mae)),
                    }
                })
                .collect();
            Curve {
                strategy: key.0,
                ablation: key.1,
                points,
            }
        })
        .collect();
    Ok(curves)
}

pub fn summary_csv(curves: &[Curve]) -> String {
    let mut out = String::from(
        "strategy,ablation,round,replicates,observed_pairs,coverage_mean,coverage_std,coverage_median,mae_replicates,mae_mean,mae_std\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in curves {
        for p in &c.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.strategy,
                c.ablation,
                p.round,
                p.replicates,
                p.observed_pairs,
                p.coverage_mean,
                p.coverage_std,
                p.coverage_median,
                p.mae_replicates,
                opt(p.mae_mean),
                opt(p.mae_std)
            )
            .expect("string write");
        }
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 90.0;
const LEGEND_W: f64 = 200.0;

struct Panel {
    x0: f64,
    max_round: f64,
    y_max: f64,
}

impl Panel {
    fn x(&self, round: f64) -> f64 {
        let span = self.max_round.max(1.0);
        self.x0 + PANEL_W * round / span
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN_T + PANEL_H * (1.0 - (v / self.y_max).clamp(0.0, 1.0))
    }
}

fn axes(svg: &mut String, panel: &Panel, title: &str, y_label: &str) {
    let (x0, y0) = (panel.x0, MARGIN_T + PANEL_H);
    writeln!(
        svg,
        r##"<rect x="{x0}" y="{MARGIN_T}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="15">{title}</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN_T - 14.0
    )
    .unwrap();
    for k in 0..=4 {
        let v = panel.y_max * k as f64 / 4.0;
        let y = panel.y(v);
        writeln!(
            svg,
            r##"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="#444"/><text x="{}" y="{}" text-anchor="end" font-size="11">{:.3}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            v
        )
        .unwrap();
    }
    let max_round = panel.max_round as usize;
    let step = (max_round / 8).max(1);
    for r in (0..=max_round).step_by(step) {
        let x = panel.x(r as f64);
        writeln!(
            svg,
            r##"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="#444"/><text x="{x}" y="{}" text-anchor="middle" font-size="11">{r}</text>"##,
            y0 + 5.0,
            y0 + 18.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">round</text>"#,
        x0 + PANEL_W / 2.0,
        y0 + 36.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text transform="translate({},{}) rotate(-90)" text-anchor="middle" font-size="12">{y_label}</text>"#,
        x0 - 45.0,
        MARGIN_T + PANEL_H / 2.0
    )
    .unwrap();
}

/// Band polygon and mean polyline for `(round, mean, std)` points.
fn series(svg: &mut String, panel: &Panel, pts: &[(usize, f64, f64)], color: &str) {
    if pts.is_empty() {
        return;
    }
    let upper: Vec<String> = pts
        .iter()
        .map(|&(r, m, s)| format!("{:.2},{:.2}", panel.x(r as f64), panel.y(m + s)))
        .collect();
    let lower: Vec<String> = pts
        .iter()
        .rev()
        .map(|&(r, m, s)| format!("{:.2},{:.2}", panel.x(r as f64), panel.y(m - s)))
        .collect();
    writeln!(
        svg,
        r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
        upper.join(" "),
        lower.join(" ")
    )
    .unwrap();
    let line: Vec<String> = pts
        .iter()
        .map(|&(r, m, _)| format!("{:.2},{:.2}", panel.x(r as f64), panel.y(m)))
        .collect();
    writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        line.join(" ")
    )
    .unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two panels: coverage and unseen-pair MAE against round, legend at right.
pub fn render_svg(curves: &[Curve], coverage_title: &str) -> String {
    let max_round = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.round))
        .max()
        .unwrap_or(0) as f64;
    let cov_top = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.coverage_mean + p.coverage_std))
        .fold(0.0, f64::max);
    let mae_top = curves
        .iter()
        .flat_map(|c| c.points.iter().filter_map(|p| Some(p.mae_mean? + p.mae_std?)))
        .fold(0.0, f64::max);
    let nice = |v: f64| if v > 0.0 { v * 1.05 } else { 1.0 };
    let left = Panel {
        x0: MARGIN_L,
        max_round,
        y_max: nice(cov_top.min(1.0 / 1.05)),
    };
    let right = Panel {
        x0: MARGIN_L + PANEL_W + GAP,
        max_round,
        y_max: nice(mae_top),
    };
    let width = right.x0 + PANEL_W + 30.0 + LEGEND_W;
    let height = MARGIN_T + PANEL_H + 60.0;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    axes(&mut svg, &left, &escape(coverage_title), "coverage");
    axes(&mut svg, &right, "MAE on unseen pairs", "mean absolute error");
    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let cov: Vec<_> = c.points.iter().map(|p| (p.round, p.coverage_mean, p.coverage_std)).collect();
        series(&mut svg, &left, &cov, color);
        let mae: Vec<_> = c
            .points
            .iter()
            .filter_map(|p| Some((p.round, p.mae_mean?, p.mae_std?)))
            .collect();
        series(&mut svg, &right, &mae, color);
    }
    let lx = right.x0 + PANEL_W + 30.0;
    writeln!(svg, r#"<g class="legend">"#).unwrap();
    for (k, c) in curves.iter().enumerate() {
        let y = MARGIN_T + 10.0 + 22.0 * k as f64;
        writeln!(
            svg,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="3"/><text x="{}" y="{}" font-size="13">{}</text>"#,
            lx + 24.0,
            PALETTE[k % PALETTE.len()],
            lx + 32.0,
            y + 4.0,
            escape(c.label())
        )
        .unwrap();
    }
    writeln!(svg, "</g>").unwrap();
    svg.push_str("</svg>\n");
    svg
}

/// Writes `summary.csv` and `curves.svg` into `dir`.
pub fn emit_curves(rows: &[MetricRow], dir: &Path, coverage_title: &str) -> Result<(PathBuf, PathBuf)> {
    let curves = summarize(rows)?;
    let summary = dir.join(SUMMARY_FILE);
    write_text(&summary, &summary_csv(&curves))?;
    let svg = dir.join(CURVES_FILE);
    write_text(&svg, &render_svg(&curves, coverage_title))?;
    Ok((summary, svg))
}
