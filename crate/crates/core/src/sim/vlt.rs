use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::grid::ArrivalSequence;

/// Single-lead-time arrival model: each order arrives in full after a lead
/// time drawn from a per-product distribution, fit as the quantity-weighted
/// empirical distribution of historical arrival offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VltModel {
    max_lead: usize,
    pmfs: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

fn normalized(w: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = w.iter().sum();
    (total > 0.0).then(|| w.iter().map(|x| x / total).collect())
}

impl VltModel {
    /// Products without arrivals fall back to the pooled distribution.
    pub fn fit(orders: &[(usize, ArrivalSequence)], products: usize, max_lead: usize) -> Result<Self, SimError> {
        let mut weights = vec![vec![0.0; max_lead + 1]; products];
        let mut pooled = vec![0.0; max_lead + 1];
        for (i, seq) in orders {
            let row = weights.get_mut(*i).ok_or(SimError::UnknownProduct(*i))?;
            for (q, lead) in seq.lead_time_pairs() {
                if lead <= max_lead {
                    row[lead] += q;
                    pooled[lead] += q;
                }
            }
        }
        let pooled = normalized(&pooled).ok_or_else(|| SimError::Invalid("no arrivals to fit lead times".into()))?;
        let pmfs = weights
            .iter()
            .map(|w| normalized(w).unwrap_or_else(|| pooled.clone()))
            .collect();
        Ok(Self {
            max_lead,
            pmfs,
            pooled,
        })
    }

    /// Every product's orders arrive after exactly `lead` periods.
    pub fn fixed(products: usize, max_lead: usize, lead: usize) -> Self {
        let mut pmf = vec![0.0; max_lead + 1];
        pmf[lead.min(max_lead)] = 1.0;
        Self {
            max_lead,
            pmfs: vec![pmf.clone(); products],
            pooled: pmf,
        }
    }

    pub fn max_lead(&self) -> usize {
        self.max_lead
    }

    pub fn pmf(&self, product: usize) -> &[f64] {
        self.pmfs.get(product).unwrap_or(&self.pooled)
    }

    pub fn mean_lead(&self, product: usize) -> f64 {
        self.pmf(product).iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }

    pub fn pooled_mean_lead(&self) -> f64 {
        self.pooled.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }

    pub fn sample_lead(&self, product: usize, rng: &mut impl Rng) -> usize {
        let pmf = self.pmf(product);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, p) in pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fit_is_quantity_weighted() {
        let orders = vec![
            (0, ArrivalSequence::new(10.0, vec![0.0, 3.0, 0.0, 1.0])),
            (0, ArrivalSequence::new(4.0, vec![0.0, 0.0, 0.0, 4.0])),
        ];
        let m = VltModel::fit(&orders, 2, 3).unwrap();
        assert_eq!(m.pmf(0), &[0.0, 0.375, 0.0, 0.625]);
        assert_eq!(m.pmf(1), m.pmf(0));
    }

    #[test]
    fn fixed_lead_always_sampled() {
        let m = VltModel::fixed(1, 4, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| m.sample_lead(0, &mut rng) == 2));
    }

    #[test]
    fn empty_history_rejected() {
        assert!(VltModel::fit(&[], 1, 2).is_err());
    }
}
