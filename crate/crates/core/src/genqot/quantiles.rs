use serde::{Deserialize, Serialize};

use super::GenQotError;
use crate::grid::ArrivalSequence;
use crate::metrics::{nearest_rank_quantile, LeadTimeSample};

/// Lead-time quantile forecast for one order, as `(q, lead)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadQuantiles {
    pub quantiles: Vec<(f64, f64)>,
}

impl LeadQuantiles {
    pub fn get(&self, q: f64) -> Option<f64> {
        self.quantiles.iter().find(|(p, _)| (p - q).abs() < 1e-9).map(|x| x.1)
    }
}

/// Nearest-rank quantiles of the quantity-weighted lead-time distribution
/// pooled over `samples`.
pub fn vlt_quantiles_from_samples(samples: &[ArrivalSequence], qs: &[f64]) -> Result<LeadQuantiles, GenQotError> {
    if samples.is_empty() {
        return Err(GenQotError::Invalid("no samples".into()));
    }
    let (leads, weights): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .flat_map(|s| s.lead_time_pairs().into_iter().map(|(q, l)| (l as f64, q)))
        .unzip();
    let quantiles = qs
        .iter()
        .map(|&q| {
            nearest_rank_quantile(&leads, &weights, q)
                .map(|l| (q, l))
                .ok_or(GenQotError::NoArrivals)
        })
        .collect::<Result<_, _>>()?;
    Ok(LeadQuantiles { quantiles })
}

/// Metric samples pairing each order's realized arrivals with its forecast.
pub fn lead_time_samples(actual: &[ArrivalSequence], forecasts: &[LeadQuantiles]) -> Vec<LeadTimeSample> {
    actual
        .iter()
        .zip(forecasts)
        .map(|(seq, f)| {
            let arrivals = seq.lead_time_pairs().into_iter().map(|(q, l)| (q, l as f64)).collect();
            let mut s = LeadTimeSample::new(arrivals);
            for &(q, l) in &f.quantiles {
                s.set_forecast(q, l);
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arrivals_quantiles() {
        let s = vec![ArrivalSequence::new(10.0, vec![0.0, 5.0, 0.0, 0.0, 0.0, 5.0])];
        let q = vlt_quantiles_from_samples(&s, &[0.1, 0.9]).unwrap();
        assert_eq!(q.quantiles, vec![(0.1, 1.0), (0.9, 5.0)]);
    }

    #[test]
    fn worked_decode_median() {
        // weights 3, 5, 5 at offsets 1, 2, 4
        let s = vec![ArrivalSequence::new(10.0, vec![0.0, 3.0, 5.0, 0.0, 5.0])];
        assert_eq!(vlt_quantiles_from_samples(&s, &[0.5]).unwrap().get(0.5), Some(2.0));
    }

    #[test]
    fn all_zero_samples_are_distinguished() {
        let s = vec![ArrivalSequence::zeros(4.0, 3)];
        assert_eq!(vlt_quantiles_from_samples(&s, &[0.5]), Err(GenQotError::NoArrivals));
    }
}
