//! Lost-sales inventory dynamics under three arrival models: replay of the
//! world's supply and shares, arrivals sampled from a generative model, and
//! classical single-lead-time delivery.
//!
//! Within period `t` the order is placed first, so offset-0 arrivals of the
//! current order are available to serve period-`t` demand:
//!
//! ```text
//! I_minus = I_{t-1} + sum_j o_{t-j, j}
//! fulfilled = min(D_t, I_minus)
//! I_t = max(I_minus - D_t, 0)
//! R_t = p_t * fulfilled - c_t * charged_t
//! J = sum_t gamma^t R_t
//! ```

mod rollout;
mod vlt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;
use crate::policy::PolicyError;
use crate::scalar::Scalar;
use crate::world::{ExogenousState, HistorySlice};

pub use rollout::{
    evaluate_policy, rollout, rollout_batch, Dynamics, EvalSummary, RolloutResult, RolloutSpec,
};
pub use vlt::VltModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("horizon {requested} exceeds the world's {available} periods")]
    Horizon { requested: usize, available: usize },
    #[error("{what} must be nonnegative and finite, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("discount {0} outside [0, 1]")]
    Gamma(f64),
    #[error("product {0} does not exist")]
    UnknownProduct(usize),
    #[error("arrival sampler: {0}")]
    Sampler(String),
    #[error("policy emitted {value} for product {product} at period {t}")]
    BadAction { product: usize, t: usize, value: f64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ReplayTruth,
    Genqot,
    VltModel,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::ReplayTruth => "replay_truth",
            Mode::Genqot => "genqot",
            Mode::VltModel => "vlt_model",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replay_truth" => Ok(Mode::ReplayTruth),
            "genqot" => Ok(Mode::Genqot),
            "vlt_model" => Ok(Mode::VltModel),
            _ => Err(format!("unknown mode `{s}` (replay_truth|genqot|vlt_model)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostBasis {
    /// Charge for the filled quantity (or total sampled arrivals).
    ChargedOnFill,
    /// Charge for the processed order quantity.
    ChargedOnOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub gamma: f64,
    pub cost_basis: CostBasis,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            cost_basis: CostBasis::ChargedOnFill,
        }
    }
}

impl RewardConfig {
    pub fn new(gamma: f64, cost_basis: CostBasis) -> Result<Self, SimError> {
        let c = Self { gamma, cost_basis };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if (0.0..=1.0).contains(&self.gamma) {
            Ok(())
        } else {
            Err(SimError::Gamma(self.gamma))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<T> {
    pub on_hand_before: T,
    pub fulfilled: T,
    pub inventory: T,
    pub lost_sales: T,
}

fn check<T: Scalar>(what: &'static str, x: T) -> Result<(), SimError> {
    if x >= T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(SimError::Negative {
            what,
            value: x.as_f64(),
        })
    }
}

pub fn inventory_step<T: Scalar>(inventory: T, arrivals: T, demand: T) -> Result<StepOutcome<T>, SimError> {
    check("inventory", inventory)?;
    check("arrivals", arrivals)?;
    check("demand", demand)?;
    let on_hand_before = inventory + arrivals;
    let fulfilled = demand.min(on_hand_before);
    let inventory = (on_hand_before - demand).max(T::zero());
    Ok(StepOutcome {
        on_hand_before,
        fulfilled,
        inventory,
        lost_sales: demand - fulfilled,
    })
}

pub fn compute_reward<T: Scalar>(price: T, cost: T, fulfilled: T, charged: T) -> Result<T, SimError> {
    check("price", price)?;
    check("cost", cost)?;
    check("fulfilled", fulfilled)?;
    check("charged", charged)?;
    Ok(price * fulfilled - cost * charged)
}

/// `o_j = min(U, q) * rho_j`.
pub fn ground_truth_arrivals(state: &ExogenousState, processed: f64) -> Result<Vec<f64>, SimError> {
    check("processed order", processed)?;
    Ok(state.arrivals(processed))
}

/// Host-side inventory and scheduled arrivals, `pipeline[k]` due `k` periods ahead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub inventory: f64,
    pub pipeline: Vec<f64>,
    pub t: usize,
    pub discounted_reward: f64,
}

impl SimState {
    pub fn new(inventory: f64, max_lead: usize) -> Self {
        Self {
            inventory,
            pipeline: vec![0.0; max_lead + 1],
            t: 0,
            discounted_reward: 0.0,
        }
    }

    pub fn schedule(&mut self, arrivals: &[f64]) {
        for (slot, o) in self.pipeline.iter_mut().zip(arrivals) {
            *slot += o;
        }
    }

    /// Receives the arrivals due now, serves demand and books the reward.
    pub fn advance(
        &mut self,
        demand: f64,
        price: f64,
        cost: f64,
        charged: f64,
        gamma: f64,
    ) -> Result<(StepOutcome<f64>, f64), SimError> {
        let due = self.pipeline.remove(0);
        self.pipeline.push(0.0);
        let out = inventory_step(self.inventory, due, demand)?;
        let r = compute_reward(price, cost, out.fulfilled, charged)?;
        self.discounted_reward += gamma.powi(self.t as i32) * r;
        self.inventory = out.inventory;
        self.t += 1;
        Ok((out, r))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub product: usize,
    pub t: usize,
    pub demand: f64,
    pub price: f64,
    pub cost: f64,
    pub action: f64,
    pub processed: f64,
    pub charged: f64,
    /// Arrivals of this period's order by offset.
    pub scheduled: Vec<f64>,
    pub received: f64,
    pub on_hand_before: f64,
    pub fulfilled: f64,
    pub lost_sales: f64,
    pub inventory: f64,
    pub reward: f64,
    #[serde(default)]
    pub forced_stop: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub product: usize,
    pub mode: Mode,
    pub seed: u64,
    pub gamma: f64,
    pub records: Vec<PeriodRecord>,
    pub total: f64,
}

impl Trajectory {
    pub fn recompute_total(&self) -> f64 {
        self.records
            .iter()
            .enumerate()
            .map(|(t, r)| self.gamma.powi(t as i32) * r.reward)
            .sum()
    }

    pub fn write_jsonl(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Partial fill rates by offset for one order, as drawn from a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledFills {
    pub fills: Vec<f64>,
    pub forced_stop: bool,
}

/// Source of sampled partial fills given the decision-time history and the
/// raw order.
pub trait FillSampler: Send + Sync {
    /// History periods the sampler reads.
    fn history_window(&self) -> usize;

    fn sample(
        &self,
        contexts: &[HistorySlice],
        actions: &[f64],
        rngs: &mut [rand_chacha::ChaCha8Rng],
    ) -> Result<Vec<SampledFills>, String>;
}

/// Replays recorded fills keyed by `(product, t)`; used to hold model
/// samples fixed across parameter perturbations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenFills {
    map: std::collections::BTreeMap<(usize, usize), SampledFills>,
}

impl FrozenFills {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, product: usize, t: usize, fills: SampledFills) {
        self.map.insert((product, t), fills);
    }

    pub fn get(&self, product: usize, t: usize) -> Option<&SampledFills> {
        self.map.get(&(product, t))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl FillSampler for FrozenFills {
    fn history_window(&self) -> usize {
        0
    }

    fn sample(
        &self,
        contexts: &[HistorySlice],
        _actions: &[f64],
        _rngs: &mut [rand_chacha::ChaCha8Rng],
    ) -> Result<Vec<SampledFills>, String> {
        contexts
            .iter()
            .map(|c| {
                self.get(c.product, c.t)
                    .cloned()
                    .ok_or_else(|| format!("no frozen fills for product {} period {}", c.product, c.t))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::VendorConstraints;
    use crate::world::Supply;

    #[test]
    fn inventory_step_examples() {
        let s = inventory_step(5.0, 0.0, 0.0).unwrap();
        assert_eq!((s.on_hand_before, s.fulfilled, s.inventory), (5.0, 0.0, 5.0));
        let s = inventory_step(3.0, 4.0, 10.0).unwrap();
        assert_eq!((s.on_hand_before, s.fulfilled, s.inventory, s.lost_sales), (7.0, 7.0, 0.0, 3.0));
        let s = inventory_step(0.0, 0.0, 9.0).unwrap();
        assert_eq!((s.fulfilled, s.inventory), (0.0, 0.0));
        assert!(inventory_step(-1.0, 0.0, 0.0).is_err());
        let s = inventory_step(3.0f32, 4.0, 10.0).unwrap();
        assert_eq!(s.fulfilled, 7.0f32);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(compute_reward(2.0, 1.0, 3.0, 4.0).unwrap(), 2.0);
        assert_eq!(compute_reward(2.0, 1.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(compute_reward(2.0, 0.0, 3.0, 40.0).unwrap(), 6.0);
        assert!(compute_reward(2.0, -1.0, 3.0, 4.0).is_err());
    }

    fn state(supply: Supply, shares: Vec<f64>) -> ExogenousState {
        ExogenousState {
            demand: 0.0,
            price: 1.0,
            cost: 1.0,
            supply,
            constraints: VendorConstraints::unconstrained(),
            shares,
        }
    }

    #[test]
    fn ground_truth_arrival_examples() {
        let s = state(Supply::Finite(8.0), vec![0.5, 0.5, 0.0]);
        assert_eq!(ground_truth_arrivals(&s, 0.0).unwrap(), vec![0.0; 3]);
        assert_eq!(ground_truth_arrivals(&s, 10.0).unwrap(), vec![4.0, 4.0, 0.0]);
        let s = state(Supply::Unlimited, vec![0.0, 0.0, 1.0]);
        assert_eq!(ground_truth_arrivals(&s, 10.0).unwrap(), vec![0.0, 0.0, 10.0]);
        assert!(ground_truth_arrivals(&s, -1.0).is_err());
    }

    #[test]
    fn gamma_validated() {
        assert!(RewardConfig::new(1.5, CostBasis::ChargedOnFill).is_err());
        assert!(RewardConfig::new(0.0, CostBasis::ChargedOnOrder).is_ok());
    }

    #[test]
    fn mode_parsing() {
        for m in [Mode::ReplayTruth, Mode::Genqot, Mode::VltModel] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("truth".parse::<Mode>().is_err());
    }

    #[test]
    fn host_state_schedules_and_serves() {
        let mut s = SimState::new(2.0, 2);
        s.schedule(&[1.0, 0.0, 3.0]);
        let (out, r) = s.advance(2.0, 3.0, 1.0, 4.0, 1.0).unwrap();
        assert_eq!((out.on_hand_before, out.fulfilled, out.inventory), (3.0, 2.0, 1.0));
        assert_eq!(r, 2.0);
        assert_eq!(s.pipeline, vec![0.0, 3.0, 0.0]);
    }
}
