//! Held-out evaluation of arrival models: lead-time quantile losses,
//! CRPS, cumulative-fill calibration and event reliability tables.

use serde::{Deserialize, Serialize};

use crate::dataset::OrderHistory;
use crate::genqot::{vlt_quantiles_from_samples, GenQotError, GenQotModel, LeadQuantiles};
use crate::grid::ArrivalSequence;
use crate::metrics::{
    calibration_coefficient, classifier_calibration, crps, quantile_loss, CalibrationBin, CalibrationResult,
    LeadTimeSample, MetricError,
};
use crate::seed;
use crate::sim::VltModel;
use crate::world::World;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] GenQotError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

/// Per-order forecasts derived from model samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderForecast {
    pub product: usize,
    pub t: usize,
    pub actual: ArrivalSequence,
    /// `None` when every sample had zero arrivals.
    pub quantiles: Option<LeadQuantiles>,
    /// Mean sampled cumulative fill rate through weeks `1..=weeks`.
    pub cumulative_fill: Vec<f64>,
    pub p_zero: f64,
    pub p_first_week: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekCalibration {
    pub week: usize,
    pub result: CalibrationResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEvaluation {
    pub model: String,
    pub orders: usize,
    /// Orders with at least one arrival and a quantile forecast.
    pub scored: usize,
    pub crps: f64,
    pub quantile_losses: Vec<(f64, f64)>,
    /// Weeks where every order got the same predicted fill are omitted.
    pub calibration: Vec<WeekCalibration>,
    pub zero_receipt: Vec<CalibrationBin>,
    pub first_week: Vec<CalibrationBin>,
}

pub const REPORT_QUANTILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn metric_quantiles() -> Vec<f64> {
    crate::metrics::quantile_grid()
}

/// Samples `n_samples` arrival sequences per order and summarizes them.
pub fn forecast_orders(
    model: &GenQotModel,
    world: &World,
    history: &OrderHistory,
    orders: &[(usize, usize)],
    n_samples: usize,
    weeks: usize,
    seed_value: u64,
) -> Result<Vec<OrderForecast>, EvalError> {
    let qs = metric_quantiles();
    orders
        .iter()
        .map(|&(i, t)| {
            let slice = history.context(world, i, t, model.spec().window)?;
            let a = history.actions[i][t];
            let samples = model.sample_arrivals(&slice, a, n_samples, seed::derive(seed_value, &[i as u64, t as u64]))?;
            let seqs: Vec<ArrivalSequence> = samples.iter().map(|s| s.decoded.sequence.clone()).collect();
            Ok(summarize(i, t, history.order(i, t), &seqs, &qs, weeks))
        })
        .collect()
}

/// Forecasts from a single-lead-time model: everything arrives at the
/// sampled lead time.
pub fn forecast_orders_vlt(
    vlt: &VltModel,
    history: &OrderHistory,
    orders: &[(usize, usize)],
    weeks: usize,
) -> Vec<OrderForecast> {
    let qs = metric_quantiles();
    orders
        .iter()
        .map(|&(i, t)| {
            let pmf = vlt.pmf(i);
            let a = history.actions[i][t];
            let leads: Vec<f64> = (0..pmf.len()).map(|j| j as f64).collect();
            let quantiles = LeadQuantiles {
                quantiles: qs
                    .iter()
                    .map(|&q| (q, crate::metrics::nearest_rank_quantile(&leads, pmf, q).unwrap_or(0.0)))
                    .collect(),
            };
            let cumulative_fill = (1..=weeks).map(|w| pmf.iter().take(w).sum()).collect();
            OrderForecast {
                product: i,
                t,
                actual: history.order(i, t),
                quantiles: (a > 0.0).then_some(quantiles),
                cumulative_fill,
                p_zero: 0.0,
                p_first_week: pmf.first().copied().unwrap_or(0.0),
            }
        })
        .collect()
}

fn summarize(i: usize, t: usize, actual: ArrivalSequence, seqs: &[ArrivalSequence], qs: &[f64], weeks: usize) -> OrderForecast {
    let n = seqs.len().max(1) as f64;
    OrderForecast {
        product: i,
        t,
        actual,
        quantiles: vlt_quantiles_from_samples(seqs, qs).ok(),
        cumulative_fill: (1..=weeks)
            .map(|w| seqs.iter().map(|s| s.cumulative_fill(w)).sum::<f64>() / n)
            .collect(),
        p_zero: seqs.iter().filter(|s| s.total() == 0.0).count() as f64 / n,
        p_first_week: seqs.iter().filter(|s| s.arrivals.first().is_some_and(|&x| x > 0.0)).count() as f64 / n,
    }
}

/// Metrics over a set of forecasts. Orders whose forecast has no arrivals
/// are excluded from the lead-time losses but kept for calibration.
pub fn evaluate_forecasts(name: &str, forecasts: &[OrderForecast], weeks: usize, bins: usize) -> Result<ArrivalEvaluation, EvalError> {
    let samples: Vec<LeadTimeSample> = forecasts
        .iter()
        .filter_map(|f| {
            let q = f.quantiles.as_ref()?;
            let arrivals: Vec<(f64, f64)> = f.actual.lead_time_pairs().into_iter().map(|(k, l)| (k, l as f64)).collect();
            if arrivals.is_empty() {
                return None;
            }
            let mut s = LeadTimeSample::new(arrivals);
            for &(p, l) in &q.quantiles {
                s.set_forecast(p, l);
            }
            Some(s)
        })
        .collect();
    let crps_value = crps(&samples, &metric_quantiles())?;
    let quantile_losses = REPORT_QUANTILES
        .iter()
        .map(|&q| Ok((q, quantile_loss(&samples, q)?)))
        .collect::<Result<_, MetricError>>()?;
    let calibration = (1..=weeks)
        .map(|w| {
            let pred: Vec<f64> = forecasts.iter().map(|f| f.cumulative_fill[w - 1]).collect();
            let act: Vec<f64> = forecasts.iter().map(|f| f.actual.cumulative_fill(w)).collect();
            match calibration_coefficient(&pred, &act) {
                Ok(result) => Ok(Some(WeekCalibration { week: w, result })),
                // a model that predicts the same fill for every order says nothing about slope
                Err(MetricError::ZeroVariance) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .filter_map(Result::transpose)
        .collect::<Result<_, MetricError>>()?;
    let pz: Vec<f64> = forecasts.iter().map(|f| f.p_zero).collect();
    let ez: Vec<bool> = forecasts.iter().map(|f| f.actual.total() == 0.0).collect();
    let p1: Vec<f64> = forecasts.iter().map(|f| f.p_first_week).collect();
    let e1: Vec<bool> = forecasts
        .iter()
        .map(|f| f.actual.arrivals.first().is_some_and(|&x| x > 0.0))
        .collect();
    Ok(ArrivalEvaluation {
        model: name.into(),
        orders: forecasts.len(),
        scored: samples.len(),
        crps: crps_value,
        quantile_losses,
        calibration,
        zero_receipt: classifier_calibration(&pz, &ez, bins),
        first_week: classifier_calibration(&p1, &e1, bins),
    })
}
