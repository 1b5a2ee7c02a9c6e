use serde::{Deserialize, Serialize};

use super::GenQotError;
use crate::world::{HistorySlice, World, HOLIDAY_DISTANCE_CAP};

/// Values per history period: log demand, log order, log receipts, and a
/// presence flag that is zero on padding.
pub const STEP_DIM: usize = 4;
const NUMERIC_STATIC: usize = 9;

/// Shape of the context encoding for one world.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub vendors: usize,
    pub groups: usize,
    pub window: usize,
    pub max_lead: usize,
}

impl FeatureSpec {
    pub fn for_world(world: &World, window: Option<usize>) -> Self {
        let (cv, cg) = world
            .ground_truth()
            .map_or((0, 0), |g| (g.config.vendors, g.config.groups));
        Self {
            vendors: world.num_vendors().max(cv),
            groups: world.num_groups().max(cg),
            window: window.unwrap_or(2 * world.max_lead()).max(1),
            max_lead: world.max_lead(),
        }
    }

    pub fn categorical(&self) -> usize {
        self.vendors + self.groups
    }

    pub fn static_dim(&self) -> usize {
        self.categorical() + NUMERIC_STATIC
    }

    /// Length of the flattened context (static part plus all steps).
    pub fn flat_dim(&self) -> usize {
        self.static_dim() + self.window * STEP_DIM
    }

    /// Raw features of ordering `action` units given `slice`.
    pub fn featurize(&self, slice: &HistorySlice, action: f64) -> Result<Features, GenQotError> {
        if !(action >= 0.0 && action.is_finite()) {
            return Err(GenQotError::Invalid(format!("order quantity {action}")));
        }
        if slice.vendor >= self.vendors || slice.group >= self.groups {
            return Err(GenQotError::Dimension {
                got: slice.vendor.max(slice.group) + 1,
                expected: self.vendors.min(self.groups),
            });
        }
        let mut s = vec![0.0; self.static_dim()];
        s[slice.vendor] = 1.0;
        s[self.vendors + slice.group] = 1.0;
        let n = slice.len();
        let keep = n.min(self.window);
        let recent = &slice.demand[n - keep..];
        let mean_demand = if keep > 0 {
            recent.iter().sum::<f64>() / keep as f64
        } else {
            0.0
        };
        let c = &slice.order_constraints;
        let numeric = [
            slice.holiday_distance as f64 / HOLIDAY_DISTANCE_CAP as f64,
            action,
            action.ln_1p(),
            action.ln_1p() - mean_demand.ln_1p(),
            mean_demand.ln_1p(),
            c.min_order_qty.ln_1p(),
            c.batch_size.ln_1p(),
            c.max_order_qty.map_or(0.0, |m| m.ln_1p()),
            keep as f64 / self.window as f64,
        ];
        s[self.categorical()..].copy_from_slice(&numeric);
        let mut steps = vec![[0.0; STEP_DIM]; self.window];
        for k in 0..keep {
            let src = n - keep + k;
            steps[self.window - keep + k] = [
                slice.demand[src].ln_1p(),
                slice.actions[src].ln_1p(),
                slice.arrivals[src].ln_1p(),
                1.0,
            ];
        }
        Ok(Features {
            statics: s,
            steps,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub statics: Vec<f64>,
    /// Oldest first; padding rows are all zero.
    pub steps: Vec<[f64; STEP_DIM]>,
}

impl Features {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.statics.clone();
        for s in &self.steps {
            v.extend_from_slice(s);
        }
        v
    }
}

/// Standardization of numeric features; one-hot codes and padding rows
/// pass through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub categorical: usize,
    pub static_mean: Vec<f64>,
    pub static_std: Vec<f64>,
    pub step_mean: Vec<f64>,
    pub step_std: Vec<f64>,
}

fn moments(rows: impl Iterator<Item = Vec<f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0.0;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for r in rows {
        n += 1.0;
        for (k, x) in r.iter().enumerate() {
            sum[k] += x;
            sq[k] += x * x;
        }
    }
    if n == 0.0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let v = (q / n - m * m).max(0.0).sqrt();
            if v > 1e-8 {
                v
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl NormStats {
    pub fn identity(spec: &FeatureSpec) -> Self {
        let numeric = spec.static_dim() - spec.categorical();
        Self {
            categorical: spec.categorical(),
            static_mean: vec![0.0; numeric],
            static_std: vec![1.0; numeric],
            step_mean: vec![0.0; STEP_DIM - 1],
            step_std: vec![1.0; STEP_DIM - 1],
        }
    }

    pub fn fit(spec: &FeatureSpec, data: &[Features]) -> Self {
        let cat = spec.categorical();
        let numeric = spec.static_dim() - cat;
        let (static_mean, static_std) = moments(data.iter().map(|f| f.statics[cat..].to_vec()), numeric);
        let (step_mean, step_std) = moments(
            data.iter()
                .flat_map(|f| f.steps.iter().filter(|s| s[STEP_DIM - 1] > 0.0).map(|s| s[..STEP_DIM - 1].to_vec())),
            STEP_DIM - 1,
        );
        Self {
            categorical: cat,
            static_mean,
            static_std,
            step_mean,
            step_std,
        }
    }

    pub fn apply(&self, f: &Features) -> Features {
        let mut out = f.clone();
        for (k, x) in out.statics[self.categorical..].iter_mut().enumerate() {
            *x = (*x - self.static_mean[k]) / self.static_std[k];
        }
        for s in out.steps.iter_mut().filter(|s| s[STEP_DIM - 1] > 0.0) {
            for k in 0..STEP_DIM - 1 {
                s[k] = (s[k] - self.step_mean[k]) / self.step_std[k];
            }
        }
        out
    }
}
