//! Tabular summaries of backtests and arrival-model evaluations, written as
//! JSON and long-format CSV. Output bytes depend only on the inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluation::ArrivalEvaluation;
use crate::metrics::{bootstrap_ci_diff, MetricError};
use crate::sim::EvalSummary;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Invalid(String),
}

/// One line of the long-format table `metric,slice,value,ci_lo,ci_hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub slice: String,
    pub value: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl MetricRow {
    pub fn new(metric: &str, slice: &str, value: f64) -> Self {
        Self {
            metric: metric.into(),
            slice: slice.into(),
            value,
            ci_lo: None,
            ci_hi: None,
        }
    }

    pub fn with_ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci_lo = Some(lo);
        self.ci_hi = Some(hi);
        self
    }
}

/// Reward of each policy relative to a baseline scaled to 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub policy: String,
    pub mean: f64,
    pub normalized: f64,
    /// 95% bootstrap interval of the normalized value, from paired
    /// differences with the baseline. Equal to `normalized` for the baseline.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Compares every summary with the one named `baseline`. Summaries must
/// cover the same products and seeds so that differences can be paired.
pub fn compare_policies(
    summaries: &[EvalSummary],
    baseline: &str,
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<PolicyComparison>, ReportError> {
    let base = summaries
        .iter()
        .find(|s| s.policy == baseline)
        .ok_or_else(|| ReportError::Invalid(format!("baseline policy `{baseline}` not found")))?;
    if base.mean == 0.0 {
        return Err(ReportError::Invalid("baseline mean reward is zero".into()));
    }
    let flat = |s: &EvalSummary| s.per_seed.iter().flatten().copied().collect::<Vec<f64>>();
    let b = flat(base);
    summaries
        .iter()
        .map(|s| {
            if s.products != base.products || s.n_seeds != base.n_seeds {
                return Err(ReportError::Invalid(format!(
                    "policy `{}` was evaluated on different products or seeds than the baseline",
                    s.policy
                )));
            }
            let normalized = 100.0 * s.mean / base.mean;
            let (lo, hi) = if s.policy == baseline {
                (normalized, normalized)
            } else {
                let ci = bootstrap_ci_diff(&flat(s), &b, n_resamples, seed)?;
                (100.0 + 100.0 * ci.lo / base.mean, 100.0 + 100.0 * ci.hi / base.mean)
            };
            Ok(PolicyComparison {
                policy: s.policy.clone(),
                mean: s.mean,
                normalized,
                ci_lo: lo,
                ci_hi: hi,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub policy: String,
    pub statistic: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Histograms of per-period order quantities and rewards. Bins are shared
/// across policies so the distributions can be overlaid.
pub fn period_histograms(summaries: &[EvalSummary], bins: usize) -> Vec<HistogramRow> {
    let mut rows = Vec::new();
    let stats: [(&str, fn(&EvalSummary) -> &[f64]); 2] = [
        ("order_quantity", |s| &s.order_quantities),
        ("reward", |s| &s.rewards),
    ];
    for (name, get) in stats {
        let all = summaries.iter().flat_map(|s| get(s).iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !lo.is_finite() || bins == 0 {
            continue;
        }
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        for s in summaries {
            let mut counts = vec![0usize; bins];
            for &x in get(s) {
                let k = (((x - lo) / width) as usize).min(bins - 1);
                counts[k] += 1;
            }
            for (k, c) in counts.into_iter().enumerate() {
                rows.push(HistogramRow {
                    policy: s.policy.clone(),
                    statistic: name.into(),
                    bin_lo: lo + k as f64 * width,
                    bin_hi: lo + (k + 1) as f64 * width,
                    count: c,
                });
            }
        }
    }
    rows
}

pub fn comparison_rows(comparisons: &[PolicyComparison]) -> Vec<MetricRow> {
    comparisons
        .iter()
        .flat_map(|c| {
            [
                MetricRow::new("reward_mean", &c.policy, c.mean),
                MetricRow::new("reward_normalized", &c.policy, c.normalized).with_ci(c.ci_lo, c.ci_hi),
            ]
        })
        .collect()
}

/// Long-format rows for arrival evaluations. CRPS and quantile losses are
/// also given normalized to `baseline` (= 100) when it is present.
pub fn arrival_rows(evals: &[ArrivalEvaluation], baseline: Option<&str>) -> Vec<MetricRow> {
    let base = baseline.and_then(|b| evals.iter().find(|e| e.model == b));
    let mut rows = Vec::new();
    for e in evals {
        let m = &e.model;
        rows.push(MetricRow::new("orders", m, e.orders as f64));
        rows.push(MetricRow::new("scored_orders", m, e.scored as f64));
        rows.push(MetricRow::new("crps", m, e.crps));
        if let Some(b) = base.filter(|b| b.crps > 0.0) {
            rows.push(MetricRow::new("crps_normalized", m, 100.0 * e.crps / b.crps));
        }
        for &(q, v) in &e.quantile_losses {
            let name = format!("ql_p{:02}", (q * 100.0).round() as u32);
            rows.push(MetricRow::new(&name, m, v));
            let bq = base.and_then(|b| b.quantile_losses.iter().find(|x| x.0 == q)).map(|x| x.1);
            if let Some(bv) = bq.filter(|&bv| bv > 0.0) {
                rows.push(MetricRow::new(&format!("{name}_normalized"), m, 100.0 * v / bv));
            }
        }
        for w in &e.calibration {
            let r = &w.result;
            rows.push(
                MetricRow::new("calibration_slope", &format!("{m}/week{}", w.week), r.slope).with_ci(r.ci_lo, r.ci_hi),
            );
        }
        for (event, bins) in [("zero_receipt", &e.zero_receipt), ("first_week", &e.first_week)] {
            if let Some(gap) = crate::metrics::mean_calibration_gap(bins) {
                rows.push(MetricRow::new(&format!("{event}_calibration_gap"), m, gap));
            }
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub model: String,
    pub event: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub mean_predicted: Option<f64>,
    pub mean_actual: Option<f64>,
    pub count: usize,
}

/// Plot data for predicted-probability vs observed-frequency curves.
pub fn reliability_rows(evals: &[ArrivalEvaluation]) -> Vec<ReliabilityRow> {
    let mut rows = Vec::new();
    for e in evals {
        for (event, bins) in [("zero_receipt", &e.zero_receipt), ("first_week", &e.first_week)] {
            for b in bins.iter() {
                rows.push(ReliabilityRow {
                    model: e.model.clone(),
                    event: event.into(),
                    bin_lo: b.lo,
                    bin_hi: b.hi,
                    mean_predicted: b.mean_predicted,
                    mean_actual: b.mean_actual,
                    count: b.count,
                });
            }
        }
    }
    rows
}

/// Writes `stem.json` and `stem.csv` under `dir`.
pub fn write_table<R: Serialize>(dir: &Path, stem: &str, rows: &[R]) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(rows)?;
    json.push('\n');
    fs::write(dir.join(format!("{stem}.json")), json)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Mode;

    fn summary(name: &str, per_seed: Vec<Vec<f64>>) -> EvalSummary {
        let k = per_seed[0].len();
        let n = per_seed.len();
        let per_product: Vec<f64> = (0..k).map(|j| per_seed.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        EvalSummary {
            policy: name.into(),
            mode: Mode::ReplayTruth,
            n_seeds: n,
            mean: per_product.iter().sum::<f64>() / k as f64,
            per_product,
            per_seed,
            products: (0..k).collect(),
            order_quantities: vec![0.0, 1.0, 2.0],
            rewards: vec![1.0, 1.0, 3.0],
            trajectories: vec![],
        }
    }

    #[test]
    fn baseline_is_one_hundred() {
        let a = summary("base", vec![vec![10.0, 20.0], vec![10.0, 20.0]]);
        let b = summary("better", vec![vec![11.0, 22.0], vec![11.0, 22.0]]);
        let c = compare_policies(&[a, b], "base", 1000, 1).unwrap();
        assert_eq!(c[0].normalized, 100.0);
        assert!((c[1].normalized - 110.0).abs() < 1e-12);
        assert!(c[1].ci_lo > 100.0);
    }

    #[test]
    fn unknown_baseline_is_an_error() {
        let a = summary("base", vec![vec![1.0]]);
        assert!(compare_policies(&[a], "nope", 1000, 1).is_err());
    }

    #[test]
    fn histogram_counts_every_period() {
        let a = summary("a", vec![vec![1.0]]);
        let rows = period_histograms(&[a], 4);
        let n: usize = rows.iter().filter(|r| r.statistic == "reward").map(|r| r.count).sum();
        assert_eq!(n, 3);
    }

    #[test]
    fn tables_are_byte_identical() {
        let rows = vec![MetricRow::new("crps", "m", 0.1 + 0.2).with_ci(0.0, 1.0), MetricRow::new("n", "m", 3.0)];
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_table(d1.path(), "t", &rows).unwrap();
        write_table(d2.path(), "t", &rows).unwrap();
        for f in ["t.json", "t.csv"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap());
        }
        let csv = fs::read_to_string(d1.path().join("t.csv")).unwrap();
        assert!(csv.starts_with("metric,slice,value,ci_lo,ci_hi\n"));
    }
}
