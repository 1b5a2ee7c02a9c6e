//! Forecast and policy evaluation metrics: weighted quantile loss, CRPS,
//! calibration regressions and tables, TV distance and paired bootstrap
//! intervals.

mod tv;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::seed;

pub use tv::{tv_against_truth, tv_distance, MAX_ENUMERATED_SEQUENCES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("total arrival weight is zero")]
    NoWeight,
    #[error("quantile {0} outside (0, 1)")]
    Quantile(f64),
    #[error("missing forecasts for quantiles {0:?}")]
    MissingQuantiles(Vec<f64>),
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("predictions have zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("invalid metric input: {0}")]
    Invalid(String),
}

/// Nearest-rank weighted quantile: the smallest value whose cumulative
/// weight reaches `q` of the total. `None` when the total weight is zero.
pub fn nearest_rank_quantile(values: &[f64], weights: &[f64], q: f64) -> Option<f64> {
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if !(total > 0.0) {
        return None;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let target = q * total;
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= target * (1.0 - 1e-12) {
            return Some(*v);
        }
    }
    pairs.last().map(|p| p.0)
}

/// Pinball loss of forecast `y` for actual `x`: `q (x-y)^+ + (1-q) (y-x)^+`.
pub fn pinball(q: f64, x: f64, y: f64) -> f64 {
    q * (x - y).max(0.0) + (1.0 - q) * (y - x).max(0.0)
}

/// The default quantile set `{0.01, 0.02, ..., 0.99}`.
pub fn quantile_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

fn same_quantile(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Arrivals of one order as `(quantity, lead)` pairs plus lead-time
/// quantile forecasts for that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeSample {
    pub arrivals: Vec<(f64, f64)>,
    pub forecasts: Vec<(f64, f64)>,
}

impl LeadTimeSample {
    pub fn new(arrivals: Vec<(f64, f64)>) -> Self {
        Self {
            arrivals,
            forecasts: Vec::new(),
        }
    }

    pub fn with_forecast(mut self, q: f64, lead: f64) -> Self {
        self.set_forecast(q, lead);
        self
    }

    pub fn set_forecast(&mut self, q: f64, lead: f64) {
        match self.forecasts.iter_mut().find(|(p, _)| same_quantile(*p, q)) {
            Some(slot) => slot.1 = lead,
            None => self.forecasts.push((q, lead)),
        }
    }

    pub fn forecast(&self, q: f64) -> Option<f64> {
        self.forecasts.iter().find(|(p, _)| same_quantile(*p, q)).map(|f| f.1)
    }

    pub fn weight(&self) -> f64 {
        self.arrivals.iter().map(|a| a.0).sum()
    }
}

fn total_weight(samples: &[LeadTimeSample]) -> Result<f64, MetricError> {
    for s in samples {
        if s.arrivals.iter().any(|(k, l)| !(*k >= 0.0) || !(*l >= 0.0)) {
            return Err(MetricError::Invalid("arrival quantities and leads must be nonnegative".into()));
        }
    }
    let w: f64 = samples.iter().map(LeadTimeSample::weight).sum();
    if w > 0.0 {
        Ok(w)
    } else {
        Err(MetricError::NoWeight)
    }
}

fn missing(samples: &[LeadTimeSample], qs: &[f64]) -> Vec<f64> {
    qs.iter()
        .copied()
        .filter(|&q| samples.iter().any(|s| s.weight() > 0.0 && s.forecast(q).is_none()))
        .collect()
}

fn weighted_loss_sum(samples: &[LeadTimeSample], q: f64) -> f64 {
    samples
        .iter()
        .filter(|s| s.weight() > 0.0)
        .map(|s| {
            let y = s.forecast(q).unwrap_or(f64::NAN);
            s.arrivals.iter().map(|(k, l)| k * pinball(q, *l, y)).sum::<f64>()
        })
        .sum()
}

/// Quantity-weighted quantile loss of the per-order forecasts at level `q`.
pub fn quantile_loss(samples: &[LeadTimeSample], q: f64) -> Result<f64, MetricError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricError::Quantile(q));
    }
    let w = total_weight(samples)?;
    let gaps = missing(samples, &[q]);
    if !gaps.is_empty() {
        return Err(MetricError::MissingQuantiles(gaps));
    }
    Ok(weighted_loss_sum(samples, q) / w)
}

/// Quantile-averaged loss over `grid`, weight-normalized.
pub fn crps(samples: &[LeadTimeSample], grid: &[f64]) -> Result<f64, MetricError> {
    if grid.is_empty() {
        return Err(MetricError::Invalid("empty quantile grid".into()));
    }
    if let Some(q) = grid.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(MetricError::Quantile(*q));
    }
    let w = total_weight(samples)?;
    let gaps = missing(samples, grid);
    if !gaps.is_empty() {
        return Err(MetricError::MissingQuantiles(gaps));
    }
    let sum: f64 = samples
        .iter()
        .filter(|s| s.weight() > 0.0)
        .map(|s| {
            s.arrivals
                .iter()
                .map(|(k, l)| {
                    let per_q: f64 = grid.iter().map(|&q| pinball(q, *l, s.forecast(q).unwrap())).sum();
                    k * per_q / grid.len() as f64
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum / w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub slope: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// No-intercept least-squares slope of `actual` on `predicted` with a
/// Student-t 95% interval.
pub fn calibration_coefficient(predicted: &[f64], actual: &[f64]) -> Result<CalibrationResult, MetricError> {
    if predicted.len() != actual.len() {
        return Err(MetricError::Length(predicted.len(), actual.len()));
    }
    let n = predicted.len();
    if n < 3 {
        return Err(MetricError::TooFew { need: 3, got: n });
    }
    let mean = predicted.iter().sum::<f64>() / n as f64;
    if predicted.iter().all(|p| (p - mean).abs() <= 1e-15 * mean.abs().max(1.0)) {
        return Err(MetricError::ZeroVariance);
    }
    let sxx: f64 = predicted.iter().map(|x| x * x).sum();
    let sxy: f64 = predicted.iter().zip(actual).map(|(x, y)| x * y).sum();
    let slope = sxy / sxx;
    let rss: f64 = predicted.iter().zip(actual).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let dof = (n - 1) as f64;
    let se = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| MetricError::Invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(CalibrationResult {
        slope,
        ci_lo: slope - t * se,
        ci_hi: slope + t * se,
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_predicted: Option<f64>,
    pub mean_actual: Option<f64>,
    pub count: usize,
}

/// Equal-width reliability table on `[0, 1]`. A probability of exactly 1
/// falls in the last bin.
pub fn classifier_calibration(probs: &[f64], events: &[bool], n_bins: usize) -> Vec<CalibrationBin> {
    let n_bins = n_bins.max(2);
    let mut sums = vec![(0.0, 0.0, 0usize); n_bins];
    for (p, e) in probs.iter().zip(events) {
        let p = p.clamp(0.0, 1.0);
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sums[b].0 += p;
        sums[b].1 += f64::from(u8::from(*e));
        sums[b].2 += 1;
    }
    sums.into_iter()
        .enumerate()
        .map(|(b, (sp, se, c))| CalibrationBin {
            lo: b as f64 / n_bins as f64,
            hi: (b + 1) as f64 / n_bins as f64,
            mean_predicted: (c > 0).then(|| sp / c as f64),
            mean_actual: (c > 0).then(|| se / c as f64),
            count: c,
        })
        .collect()
}

/// Count-weighted mean of `|mean_predicted - mean_actual|` over occupied bins.
pub fn mean_calibration_gap(bins: &[CalibrationBin]) -> Option<f64> {
    let total: usize = bins.iter().map(|b| b.count).sum();
    (total > 0).then(|| {
        bins.iter()
            .filter_map(|b| Some(b.count as f64 * (b.mean_predicted? - b.mean_actual?).abs()))
            .sum::<f64>()
            / total as f64
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean_diff: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_resamples: usize,
}

impl BootstrapCi {
    pub fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

/// Paired percentile bootstrap of `mean(a - b)`.
pub fn bootstrap_ci_diff(a: &[f64], b: &[f64], n_resamples: usize, seed: u64) -> Result<BootstrapCi, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Length(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::TooFew { need: 1, got: 0 });
    }
    if n_resamples < 1000 {
        return Err(MetricError::Invalid(format!("need at least 1000 resamples, got {n_resamples}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mean_diff = d.iter().sum::<f64>() / n as f64;
    let mut rng = seed::rng_for(seed, &[0xb007]);
    let means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| d[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let ones = vec![1.0; n_resamples];
    Ok(BootstrapCi {
        mean_diff,
        lo: nearest_rank_quantile(&means, &ones, 0.025).unwrap_or(mean_diff),
        hi: nearest_rank_quantile(&means, &ones, 0.975).unwrap_or(mean_diff),
        n_resamples,
    })
}

/// `100 * value / baseline`.
pub fn normalized_to_baseline(value: f64, baseline: f64) -> f64 {
    100.0 * value / baseline
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_arrival_loss() {
        let s = vec![LeadTimeSample::new(vec![(1.0, 3.0)]).with_forecast(0.5, 5.0)];
        assert_eq!(quantile_loss(&s, 0.5).unwrap(), 1.0);
        let doubled = vec![LeadTimeSample::new(vec![(2.0, 3.0)]).with_forecast(0.5, 5.0)];
        assert_eq!(quantile_loss(&doubled, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn zero_weight_is_distinguished() {
        let s = vec![LeadTimeSample::new(vec![(0.0, 3.0)]).with_forecast(0.5, 5.0)];
        assert_eq!(quantile_loss(&s, 0.5), Err(MetricError::NoWeight));
    }

    #[test]
    fn crps_reports_missing_quantiles() {
        let s = vec![LeadTimeSample::new(vec![(1.0, 3.0)]).with_forecast(0.5, 3.0)];
        match crps(&s, &[0.25, 0.5, 0.75]) {
            Err(MetricError::MissingQuantiles(m)) => assert_eq!(m, vec![0.25, 0.75]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nearest_rank_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0; 4];
        assert_eq!(nearest_rank_quantile(&v, &w, 0.5), Some(2.0));
        assert_eq!(nearest_rank_quantile(&v, &w, 0.51), Some(3.0));
        assert_eq!(nearest_rank_quantile(&v, &w, 1.0), Some(4.0));
        assert_eq!(nearest_rank_quantile(&v, &[0.0; 4], 0.5), None);
    }

    #[test]
    fn calibration_identity_and_scaling() {
        let p = [1.0, 2.0, 3.0, 4.0];
        let r = calibration_coefficient(&p, &p).unwrap();
        assert_eq!(r.slope, 1.0);
        assert!(r.ci_lo <= 1.0 && r.ci_hi >= 1.0);
        let a: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        assert_eq!(calibration_coefficient(&p, &a).unwrap().slope, 2.0);
        assert_eq!(calibration_coefficient(&[1.0; 3], &[1.0; 3]), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn adversarial_reliability_bin() {
        let bins = classifier_calibration(&[1.0; 5], &[false; 5], 10);
        let last = bins.last().unwrap();
        assert_eq!((last.mean_predicted, last.mean_actual, last.count), (Some(1.0), Some(0.0), 5));
        assert!(bins[..9].iter().all(|b| b.count == 0));
        assert_eq!(mean_calibration_gap(&bins), Some(1.0));
    }

    #[test]
    fn bootstrap_constant_shift() {
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let ci = bootstrap_ci_diff(&a, &b, 1000, 1).unwrap();
        assert!((ci.lo - 1.0).abs() < 1e-12 && (ci.hi - 1.0).abs() < 1e-12);
        assert!(bootstrap_ci_diff(&a, &b[1..], 1000, 1).is_err());
        assert!(bootstrap_ci_diff(&a, &b, 999, 1).is_err());
    }
}
