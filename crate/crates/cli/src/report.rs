//! Report tables from run outputs.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use qotsim::evaluation::ArrivalEvaluation;
use qotsim::report::{
    arrival_rows, compare_policies, comparison_rows, period_histograms, reliability_rows, write_table, MetricRow,
};
use qotsim::sim::EvalSummary;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const BACKTEST_FILE: &str = "backtest.json";
pub const ARRIVAL_EVAL_FILE: &str = "arrival_eval.json";
pub const METRICS: [&str; 3] = ["crps", "ql", "calibration"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BacktestIndex {
    pub policies: Vec<String>,
    pub baseline: String,
    pub mode: String,
    pub seeds: usize,
    pub test_from: usize,
}

#[derive(Serialize)]
struct CalibrationRow {
    model: String,
    week: usize,
    slope: f64,
    ci_lo: f64,
    ci_hi: f64,
    n: usize,
}

pub fn parse_metrics(list: &str) -> Result<BTreeSet<String>, CliError> {
    let mut out = BTreeSet::new();
    for m in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if !METRICS.contains(&m) {
            return Err(CliError::usage(format!("unknown metric `{m}` (expected {})", METRICS.join(","))));
        }
        out.insert(m.to_string());
    }
    if out.is_empty() {
        return Err(CliError::usage("--metrics is empty"));
    }
    Ok(out)
}

fn keep(row: &MetricRow, metrics: &BTreeSet<String>) -> bool {
    let m = row.metric.as_str();
    if m.starts_with("crps") {
        metrics.contains("crps")
    } else if m.starts_with("ql_") {
        metrics.contains("ql")
    } else if m.starts_with("calibration") || m.ends_with("calibration_gap") {
        metrics.contains("calibration")
    } else {
        true
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::failed(format!("{}: {e}", path.display())))
}

/// Writes the normalized reward table, per-period histograms, calibration
/// tables and reliability-plot data for whatever `run` contains.
pub fn generate_report(
    run: &Path,
    out: &Path,
    baseline: Option<&str>,
    metrics: &BTreeSet<String>,
    seed: u64,
    resamples: usize,
) -> Result<(), CliError> {
    let backtest = run.join(BACKTEST_FILE);
    let arrivals = run.join(ARRIVAL_EVAL_FILE);
    if !backtest.exists() && !arrivals.exists() {
        return Err(CliError::missing(format!(
            "no report inputs in {}: expected {} or {}",
            run.display(),
            BACKTEST_FILE,
            ARRIVAL_EVAL_FILE
        )));
    }
    let mut rows = Vec::new();
    if backtest.exists() {
        let index: BacktestIndex = read_json(&backtest)?;
        let paths: Vec<_> = index
            .policies
            .iter()
            .map(|p| run.join("summaries").join(format!("{p}.json")))
            .collect();
        let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
        if !missing.is_empty() {
            return Err(CliError::missing(format!("missing policy summaries: {}", missing.join(", "))));
        }
        let summaries = paths.iter().map(|p| read_json::<EvalSummary>(p)).collect::<Result<Vec<_>, _>>()?;
        let base = baseline.unwrap_or(&index.baseline);
        let comparisons = compare_policies(&summaries, base, resamples, seed)?;
        write_table(out, "rewards", &comparisons)?;
        write_table(out, "period_histograms", &period_histograms(&summaries, 20))?;
        rows.extend(comparison_rows(&comparisons));
    }
    if arrivals.exists() {
        let evals: Vec<ArrivalEvaluation> = read_json(&arrivals)?;
        let base = evals.iter().any(|e| e.model == "vlt").then_some("vlt");
        rows.extend(arrival_rows(&evals, base));
        if metrics.contains("calibration") {
            let cal: Vec<CalibrationRow> = evals
                .iter()
                .flat_map(|e| {
                    e.calibration.iter().map(|w| CalibrationRow {
                        model: e.model.clone(),
                        week: w.week,
                        slope: w.result.slope,
                        ci_lo: w.result.ci_lo,
                        ci_hi: w.result.ci_hi,
                        n: w.result.n,
                    })
                })
                .collect();
            write_table(out, "calibration", &cal)?;
            write_table(out, "reliability", &reliability_rows(&evals))?;
        }
    }
    rows.retain(|r| keep(r, metrics));
    write_table(out, "metrics", &rows)?;
    Ok(())
}
