//! Tables and static figures for run bundles and family comparisons.
//!
//! Every writer formats numbers with fixed precision and iterates in sorted
//! order, so identical inputs produce identical bytes.

mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use svg::{BarChart, Heatmap};

use crate::error::{Error, Result};
use crate::harness::{ComparisonTable, ResultBundle};

/// Series name of the first-stage scores.
pub const STAGE_ONE: &str = "stage1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];
}

/// Mean and spread of one series at one axis point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub series: String,
    pub axis: String,
    pub mean: f64,
    pub std: f64,
    /// Observations behind the mean (folds or models).
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub axis: String,
    pub group_a: String,
    pub group_b: String,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub stars: String,
}

/// Contents of `report.json` or `comparison.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    /// Per-region (or per-block) scores of each series.
    pub scores: Vec<SummaryRow>,
    /// Refined minus first-stage score, per strategy and region.
    #[serde(default)]
    pub gains: Vec<SummaryRow>,
    #[serde(default)]
    pub significance: Vec<SignificanceRow>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Report {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn scores_csv(&self) -> String {
        summary_csv(&self.scores)
    }

    pub fn gains_csv(&self) -> String {
        summary_csv(&self.gains)
    }

    /// Grouped bar chart of `rows`, one group per axis point in first-seen
    /// order and one bar per series.
    fn chart(&self, rows: &[SummaryRow], title: &str, y_label: &str) -> BarChart {
        let mut groups: Vec<String> = Vec::new();
        let mut series: Vec<String> = Vec::new();
        for r in rows {
            if !groups.contains(&r.axis) {
                groups.push(r.axis.clone());
            }
            if !series.contains(&r.series) {
                series.push(r.series.clone());
            }
        }
        let values = groups
            .iter()
            .map(|g| {
                series
                    .iter()
                    .map(|s| {
                        rows.iter()
                            .find(|r| &r.axis == g && &r.series == s)
                            .map_or((0.0, 0.0), |r| (r.mean, r.std))
                    })
                    .collect()
            })
            .collect();
        let annotations = groups
            .iter()
            .map(|g| {
                self.significance
                    .iter()
                    .filter(|t| &t.axis == g)
                    .map(|t| {
                        if series.len() > 2 {
                            format!("{}/{} {}", t.group_a, t.group_b, t.stars)
                        } else {
                            t.stars.clone()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("  ")
            })
            .collect();
        BarChart {
            title: title.into(),
            y_label: y_label.into(),
            groups,
            series,
            values,
            annotations,
        }
    }
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("series,axis,mean,std,n\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6},{}", r.series, r.axis, r.mean, r.std, r.n);
    }
    s
}

fn significance_csv(rows: &[SignificanceRow]) -> String {
    let mut s = String::from("axis,group_a,group_b,t,df,p,stars\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6e},{}",
            r.axis, r.group_a, r.group_b, r.t, r.df, r.p, r.stars
        );
    }
    s
}

/// Builds the report of a run bundle.
pub fn bundle_report(bundle: &ResultBundle) -> Result<Report> {
    if bundle.aggregates.is_empty() {
        return Err(Error::EmptyInput("the bundle holds no scores".into()));
    }
    let mut scores: Vec<SummaryRow> = bundle
        .aggregates
        .values()
        .map(|a| SummaryRow {
            series: STAGE_ONE.into(),
            axis: a.region.clone(),
            mean: a.mean,
            std: a.std,
            n: a.folds,
        })
        .collect();
    let mut gains = Vec::new();
    for r in &bundle.refinements {
        scores.extend(r.aggregates.values().map(|a| SummaryRow {
            series: r.strategy.clone(),
            axis: a.region.clone(),
            mean: a.mean,
            std: a.std,
            n: a.folds,
        }));
        gains.extend(r.gains.values().map(|g| SummaryRow {
            series: r.strategy.clone(),
            axis: g.region.clone(),
            mean: g.mean,
            std: g.std,
            n: g.per_fold.len(),
        }));
    }
    // Region-major order so the chart groups by region.
    let order: Vec<&String> = bundle.regions.iter().collect();
    let rank = |axis: &str| order.iter().position(|r| r.as_str() == axis).unwrap_or(usize::MAX);
    scores.sort_by_key(|r| rank(&r.axis));
    gains.sort_by_key(|r| rank(&r.axis));
    let mut notes = bundle.notes.clone();
    notes.push("error bars: population standard deviation over folds".into());
    Ok(Report {
        title: format!("{} to {}", bundle.source_model, bundle.target),
        scores,
        gains,
        significance: Vec::new(),
        notes,
    })
}

/// Builds the report of a family comparison.
pub fn comparison_report(table: &ComparisonTable) -> Result<Report> {
    if table.rows.is_empty() {
        return Err(Error::EmptyInput("the comparison holds no rows".into()));
    }
    let mut scores = Vec::new();
    let mut significance = Vec::new();
    for row in &table.rows {
        scores.extend(row.groups.iter().map(|g| SummaryRow {
            series: g.group.clone(),
            axis: row.axis.clone(),
            mean: g.mean,
            std: g.std,
            n: g.models,
        }));
        significance.extend(row.tests.iter().map(|t| SignificanceRow {
            axis: row.axis.clone(),
            group_a: t.group_a.clone(),
            group_b: t.group_b.clone(),
            t: t.result.t,
            df: t.result.df,
            p: t.result.p,
            stars: t.result.stars.label().into(),
        }));
    }
    Ok(Report {
        title: "family comparison".into(),
        scores,
        gains: Vec::new(),
        significance,
        notes: vec![
            format!("Welch sample unit: {}", table.sample_unit),
            "error bars: sample standard deviation over models".into(),
        ],
    })
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes the tables and figures of a run bundle into `dir` and returns the
/// written paths.
///
/// Files: `report.json`; `scores.csv`, `fold_scores.csv`, `gains.csv`,
/// `attribution_<strategy>.csv`; `scores.svg`, `gains.svg`,
/// `attribution_<strategy>.svg`. Gain and attribution files appear only when
/// the bundle has refinements.
pub fn emit_report(bundle: &ResultBundle, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let report = bundle_report(bundle)?;
    if formats.is_empty() {
        return Err(Error::InvalidInput("no report formats requested".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let attributions: Vec<_> = bundle
        .refinements
        .iter()
        .filter_map(|r| r.attribution.as_ref().map(|a| (r.strategy.as_str(), a)))
        .collect();

    if formats.contains(&ReportFormat::Json) {
        write(dir, "report.json", &serde_json::to_string_pretty(&report)?, &mut written)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        write(dir, "scores.csv", &report.scores_csv(), &mut written)?;
        let mut folds = String::from("series,fold,subject,region,mean_r,valid_voxels,invalid_voxels\n");
        let all = std::iter::once((STAGE_ONE, &bundle.scores))
            .chain(bundle.refinements.iter().map(|r| (r.strategy.as_str(), &r.scores)));
        for (series, scores) in all {
            for s in scores {
                let _ = writeln!(
                    folds,
                    "{series},{},{},{},{:.6},{},{}",
                    s.fold, s.subject, s.region, s.mean_r, s.valid_voxels, s.invalid_voxels
                );
            }
        }
        write(dir, "fold_scores.csv", &folds, &mut written)?;
        if !report.gains.is_empty() {
            write(dir, "gains.csv", &report.gains_csv(), &mut written)?;
        }
        for (strategy, a) in &attributions {
            write(dir, &format!("attribution_{}.csv", file_stem(strategy)), &a.to_csv(), &mut written)?;
        }
    }
    if formats.contains(&ReportFormat::Svg) {
        let chart = report.chart(&report.scores, &report.title, "mean Pearson r");
        write(dir, "scores.svg", &chart.to_svg(), &mut written)?;
        if !report.gains.is_empty() {
            // Gains are small; display them x100.
            let scaled: Vec<SummaryRow> = report
                .gains
                .iter()
                .map(|g| SummaryRow {
                    mean: g.mean * 100.0,
                    std: g.std * 100.0,
                    ..g.clone()
                })
                .collect();
            let chart = report.chart(&scaled, "connectivity gain", "gain in Pearson r (x100)");
            write(dir, "gains.svg", &chart.to_svg(), &mut written)?;
        }
        for (strategy, a) in &attributions {
            let norm = a.normalized();
            let map = Heatmap {
                title: format!("attribution ({strategy})"),
                labels: norm.regions.clone(),
                values: norm.values.clone(),
            };
            write(dir, &format!("attribution_{}.svg", file_stem(strategy)), &map.to_svg(), &mut written)?;
        }
    }
    Ok(written)
}

/// Writes `comparison.json`, `comparison.csv`, `significance.csv`,
/// `groups.csv` (with the worst and best model per group) and
/// `comparison.svg` as requested.
pub fn emit_comparison(table: &ComparisonTable, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let report = comparison_report(table)?;
    if formats.is_empty() {
        return Err(Error::InvalidInput("no report formats requested".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        write(dir, "comparison.json", &serde_json::to_string_pretty(&report)?, &mut written)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        write(dir, "comparison.csv", &table.to_csv(), &mut written)?;
        write(dir, "significance.csv", &significance_csv(&report.significance), &mut written)?;
        let mut groups = String::from("axis,group,models,mean,std,min_model,min,max_model,max\n");
        for row in &table.rows {
            for g in &row.groups {
                let _ = writeln!(
                    groups,
                    "{},{},{},{:.6},{:.6},{},{:.6},{},{:.6}",
                    row.axis, g.group, g.models, g.mean, g.std, g.min.0, g.min.1, g.max.0, g.max.1
                );
            }
        }
        write(dir, "groups.csv", &groups, &mut written)?;
    }
    if formats.contains(&ReportFormat::Svg) {
        let chart = report.chart(&report.scores, "family comparison", "mean Pearson r");
        write(dir, "comparison.svg", &chart.to_svg(), &mut written)?;
    }
    Ok(written)
}
