//! Order histories: what was ordered, received and scheduled under a
//! behavior policy, and their conversion to Gen-QOT training examples.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::genqot::{GenQotError, GenQotModel, TrainExample};
use crate::grid::{ArrivalClassGrid, ArrivalSequence, GridError, RepresentativeMode};
use crate::policy::Policy;
use crate::postprocess::PostProcessor;
use crate::sim::{rollout_batch, Dynamics, RolloutSpec, SimError};
use crate::world::{slice_history_window, HistorySlice, World, WorldError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Model(#[from] GenQotError),
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("history covers {got} products, world has {expected}")]
    Shape { got: usize, expected: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const HISTORY_FILE: &str = "history.csv";

/// Per-product order, receipt and scheduled-arrival series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderHistory {
    pub max_lead: usize,
    pub actions: Vec<Vec<f64>>,
    pub received: Vec<Vec<f64>>,
    /// `scheduled[i][t][j]`: units of product `i`'s order from `t` arriving at `t + j`.
    pub scheduled: Vec<Vec<Vec<f64>>>,
}

impl OrderHistory {
    /// Replays `behavior` against the ground-truth arrival process.
    pub fn simulate(world: &World, behavior: &dyn Policy, post: &dyn PostProcessor, seed: u64) -> Result<Self, DatasetError> {
        let spec = RolloutSpec::new(world, behavior, Dynamics::ReplayTruth)
            .postprocessor(post)
            .seed(seed);
        let result = rollout_batch(&spec)?;
        let mut h = Self {
            max_lead: world.max_lead(),
            actions: Vec::new(),
            received: Vec::new(),
            scheduled: Vec::new(),
        };
        for tr in &result.trajectories {
            h.actions.push(tr.records.iter().map(|r| r.action).collect());
            h.received.push(tr.records.iter().map(|r| r.received).collect());
            h.scheduled.push(tr.records.iter().map(|r| r.scheduled.clone()).collect());
        }
        Ok(h)
    }

    pub fn products(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn order(&self, i: usize, t: usize) -> ArrivalSequence {
        ArrivalSequence::new(self.actions[i][t], self.scheduled[i][t].clone())
    }

    pub fn context(&self, world: &World, i: usize, t: usize, window: usize) -> Result<HistorySlice, DatasetError> {
        Ok(slice_history_window(world, i, t, window, &self.actions[i][..t], &self.received[i][..t])?)
    }

    /// Nonzero orders placed in periods `range`, as `(product, t)`.
    pub fn orders_in(&self, range: std::ops::Range<usize>) -> Vec<(usize, usize)> {
        (0..self.products())
            .flat_map(|i| range.clone().filter(move |&t| t < self.horizon()).map(move |t| (i, t)))
            .filter(|&(i, t)| self.actions[i][t] > 0.0)
            .collect()
    }

    /// Training examples and their sequences for the given orders.
    pub fn examples(
        &self,
        world: &World,
        model: &GenQotModel,
        orders: &[(usize, usize)],
    ) -> Result<(Vec<TrainExample>, Vec<ArrivalSequence>), DatasetError> {
        let window = model.spec().window;
        let mut ex = Vec::with_capacity(orders.len());
        let mut seqs = Vec::with_capacity(orders.len());
        for &(i, t) in orders {
            let slice = self.context(world, i, t, window)?;
            let seq = self.order(i, t);
            ex.push(model.example(&slice, &seq)?);
            seqs.push(seq);
        }
        Ok((ex, seqs))
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, DatasetError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["product".to_string(), "t".into(), "action".into(), "received".into()];
        header.extend((0..=self.max_lead).map(|j| format!("o_{j}")));
        w.write_record(&header)?;
        for i in 0..self.products() {
            for t in 0..self.horizon() {
                let mut row = vec![
                    i.to_string(),
                    t.to_string(),
                    format!("{:.16e}", self.actions[i][t]),
                    format!("{:.16e}", self.received[i][t]),
                ];
                row.extend(self.scheduled[i][t].iter().map(|o| format!("{o:.16e}")));
                w.write_record(&row)?;
            }
        }
        w.into_inner().map_err(|e| DatasetError::Io(e.into_error()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<String, DatasetError> {
        let bytes = self.to_csv()?;
        fs::create_dir_all(dir.as_ref())?;
        fs::write(dir.as_ref().join(HISTORY_FILE), &bytes)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Reads a history written by [`OrderHistory::save`]; returns it with
    /// the SHA-256 of the file.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, String), DatasetError> {
        let path = dir.as_ref().join(HISTORY_FILE);
        let bytes = fs::read(&path)?;
        let hash = hex::encode(Sha256::digest(&bytes));
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let width = r.headers()?.len();
        if width < 5 {
            return Err(DatasetError::Malformed {
                file: HISTORY_FILE.into(),
                line: 1,
                msg: "expected product,t,action,received,o_0..".into(),
            });
        }
        let max_lead = width - 5;
        let mut h = Self {
            max_lead,
            actions: Vec::new(),
            received: Vec::new(),
            scheduled: Vec::new(),
        };
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec?;
            let bad = |msg: String| DatasetError::Malformed {
                file: HISTORY_FILE.into(),
                line,
                msg,
            };
            let num = |c: usize| -> Result<f64, DatasetError> {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|x| x.is_finite() && *x >= 0.0)
                    .ok_or_else(|| bad(format!("column {c} is not a nonnegative number")))
            };
            let idx = |c: usize| -> Result<usize, DatasetError> {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<usize>().ok())
                    .ok_or_else(|| bad(format!("column {c} is not an index")))
            };
            let (i, t) = (idx(0)?, idx(1)?);
            if i == h.actions.len() {
                h.actions.push(Vec::new());
                h.received.push(Vec::new());
                h.scheduled.push(Vec::new());
            }
            if i + 1 != h.actions.len() || t != h.actions[i].len() {
                return Err(bad(format!("rows out of order at product {i}, period {t}")));
            }
            h.actions[i].push(num(2)?);
            h.received[i].push(num(3)?);
            h.scheduled[i].push((4..width).map(num).collect::<Result<_, _>>()?);
        }
        Ok((h, hash))
    }

    pub fn check_world(&self, world: &World) -> Result<(), DatasetError> {
        if self.products() != world.num_products() || self.horizon() > world.horizon() || self.max_lead != world.max_lead() {
            return Err(DatasetError::Shape {
                got: self.products(),
                expected: world.num_products(),
            });
        }
        Ok(())
    }
}

/// Share edges: tenths up to 0.9, a narrow bin around a complete fill,
/// and two bins for over-delivery up to twice the order.
pub const DEFAULT_SHARE_EDGES: [f64; 14] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 1.01, 1.25, 2.0];

/// Unit gap bins covering lead times `0..=max_lead` with
/// [`DEFAULT_SHARE_EDGES`] and data-mean representatives.
pub fn default_grid(max_lead: usize) -> Result<ArrivalClassGrid, GridError> {
    ArrivalClassGrid::build((0..=max_lead + 1).collect(), DEFAULT_SHARE_EDGES.to_vec(), RepresentativeMode::DataMean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ConstantPolicy;
    use crate::postprocess::IdentityPostProcessor;
    use crate::world::{generate_world, WorldConfig};

    #[test]
    fn csv_round_trip_and_hash() {
        let w = generate_world(&WorldConfig::multi_shipment(2, 10), 3).unwrap();
        let p = ConstantPolicy::new(5.0);
        let h = OrderHistory::simulate(&w, &p, &IdentityPostProcessor, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hash = h.save(dir.path()).unwrap();
        let (back, hash2) = OrderHistory::load(dir.path()).unwrap();
        assert_eq!(back, h);
        assert_eq!(hash, hash2);
        assert_eq!(h.orders_in(0..10).len(), 20);
    }
}
