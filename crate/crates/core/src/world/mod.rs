//! Exogenous per-product processes: demand, price, cost, supply, vendor
//! constraints and arrival shares, plus static product codes and a holiday
//! calendar. Synthetic worlds keep the generator config and seed.

mod config;
mod history;
mod io;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::postprocess::VendorConstraints;

pub use config::{
    generate_world, ConstraintRegime, DemandRegime, EconomicsRegime, SharesAtom, SharesRegime, SupplyAtom,
    SupplyRegime, WorldConfig,
};
pub use history::{slice_history, slice_history_window, HistorySlice, HOLIDAY_DISTANCE_CAP};
pub use io::{export_world, import_world, WORLD_FORMAT_VERSION};

/// Tolerance on `sum(rho) == 1`.
pub const SHARES_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error("shares for product {product} period {t} sum to {sum}{}", location(.file, .line))]
    SharesSum {
        product: usize,
        t: usize,
        sum: f64,
        file: Option<String>,
        line: Option<usize>,
    },
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("dataset format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("period {t} outside 0..={horizon}")]
    PeriodOutOfRange { t: usize, horizon: usize },
    #[error("product {0} does not exist")]
    UnknownProduct(usize),
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

fn location(file: &Option<String>, line: &Option<usize>) -> String {
    match (file, line) {
        (Some(f), Some(l)) => format!(" ({f}:{l})"),
        _ => String::new(),
    }
}

/// Vendor's maximum shippable quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Supply {
    Finite(f64),
    Unlimited,
}

impl Supply {
    /// `min(U, q)`.
    pub fn fill(&self, q: f64) -> f64 {
        match *self {
            Supply::Finite(u) => u.min(q),
            Supply::Unlimited => q,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Supply::Finite(u) => u,
            Supply::Unlimited => f64::INFINITY,
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            Supply::Unlimited
        } else {
            Supply::Finite(x)
        }
    }

    pub fn is_unlimited(&self) -> bool {
        matches!(self, Supply::Unlimited)
    }
}

impl fmt::Display for Supply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Supply::Finite(u) => write!(f, "{u}"),
            Supply::Unlimited => f.write_str("inf"),
        }
    }
}

impl Serialize for Supply {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Supply::Finite(u) => s.serialize_f64(u),
            Supply::Unlimited => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Supply {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Supply::Finite(x)),
            Raw::Text(t) if t == "inf" || t == "unlimited" => Ok(Supply::Unlimited),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad supply `{t}`"))),
        }
    }
}

/// One period of one product's exogenous processes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExogenousState {
    pub demand: f64,
    pub price: f64,
    pub cost: f64,
    pub supply: Supply,
    pub constraints: VendorConstraints,
    /// Arrival shares by lead-time offset `0..=L`.
    pub shares: Vec<f64>,
}

impl ExogenousState {
    pub fn validate(&self, product: usize, t: usize, max_lead: usize) -> Result<(), WorldError> {
        let bad = |msg: String| Err(WorldError::Invalid(format!("product {product} period {t}: {msg}")));
        for (name, v) in [("demand", self.demand), ("price", self.price), ("cost", self.cost)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v}"));
            }
        }
        if let Supply::Finite(u) = self.supply {
            if !(u >= 0.0 && u.is_finite()) {
                return bad(format!("supply {u}"));
            }
        }
        if let Err(e) = self.constraints.validate() {
            return bad(e.to_string());
        }
        if self.shares.len() != max_lead + 1 {
            return bad(format!("{} shares, expected {}", self.shares.len(), max_lead + 1));
        }
        if self.shares.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return bad(format!("negative or non-finite share in {:?}", self.shares));
        }
        let sum: f64 = self.shares.iter().sum();
        if (sum - 1.0).abs() > SHARES_TOLERANCE {
            return Err(WorldError::SharesSum {
                product,
                t,
                sum,
                file: None,
                line: None,
            });
        }
        Ok(())
    }

    /// Ground-truth arrivals `min(U, q) * rho_j`.
    pub fn arrivals(&self, processed: f64) -> Vec<f64> {
        let filled = self.supply.fill(processed);
        self.shares.iter().map(|r| filled * r).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub vendor: usize,
    pub group: usize,
    pub initial_inventory: f64,
}

/// Generator config and seed of a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: WorldConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    max_lead: usize,
    products: Vec<Product>,
    states: Vec<Vec<ExogenousState>>,
    holidays: Vec<usize>,
    ground_truth: Option<GroundTruth>,
}

impl World {
    pub fn new(
        max_lead: usize,
        products: Vec<Product>,
        states: Vec<Vec<ExogenousState>>,
        holidays: Vec<usize>,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self, WorldError> {
        if products.is_empty() {
            return Err(WorldError::Invalid("no products".into()));
        }
        if states.len() != products.len() {
            return Err(WorldError::Length {
                what: "state table",
                got: states.len(),
                expected: products.len(),
            });
        }
        let horizon = states[0].len();
        for (i, seq) in states.iter().enumerate() {
            if seq.len() != horizon {
                return Err(WorldError::Invalid(format!(
                    "product {i} has {} periods, product 0 has {horizon}",
                    seq.len()
                )));
            }
            for (t, s) in seq.iter().enumerate() {
                s.validate(i, t, max_lead)?;
            }
        }
        for p in &products {
            if !(p.initial_inventory >= 0.0 && p.initial_inventory.is_finite()) {
                return Err(WorldError::Invalid(format!("initial inventory {}", p.initial_inventory)));
            }
        }
        let mut holidays = holidays;
        holidays.sort_unstable();
        holidays.dedup();
        Ok(Self {
            max_lead,
            products,
            states,
            holidays,
            ground_truth,
        })
    }

    pub fn max_lead(&self) -> usize {
        self.max_lead
    }

    pub fn horizon(&self) -> usize {
        self.states[0].len()
    }

    pub fn num_products(&self) -> usize {
        self.products.len()
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn product(&self, i: usize) -> &Product {
        &self.products[i]
    }

    pub fn states(&self, i: usize) -> &[ExogenousState] {
        &self.states[i]
    }

    pub fn state(&self, i: usize, t: usize) -> &ExogenousState {
        &self.states[i][t]
    }

    pub fn holidays(&self) -> &[usize] {
        &self.holidays
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn is_synthetic(&self) -> bool {
        self.ground_truth.is_some()
    }

    pub fn num_vendors(&self) -> usize {
        self.products.iter().map(|p| p.vendor + 1).max().unwrap_or(1)
    }

    pub fn num_groups(&self) -> usize {
        self.products.iter().map(|p| p.group + 1).max().unwrap_or(1)
    }

    /// Periods until the next holiday at or after `t`, capped at `cap`.
    pub fn holiday_distance(&self, t: usize, cap: usize) -> usize {
        let k = self.holidays.partition_point(|&h| h < t);
        self.holidays.get(k).map_or(cap, |&h| (h - t).min(cap))
    }

    /// Periods `[start, end)` as a new world over the same products; the
    /// holiday calendar is shifted accordingly.
    pub fn window(&self, start: usize, end: usize) -> Result<World, WorldError> {
        if start >= end || end > self.horizon() {
            return Err(WorldError::PeriodOutOfRange {
                t: end,
                horizon: self.horizon(),
            });
        }
        let states = self.states.iter().map(|s| s[start..end].to_vec()).collect();
        let holidays = self
            .holidays
            .iter()
            .filter(|&&h| h >= start)
            .map(|&h| h - start)
            .collect();
        World::new(self.max_lead, self.products.clone(), states, holidays, self.ground_truth.clone())
    }

    /// Subset of products, renumbered in the given order.
    pub fn select_products(&self, ids: &[usize]) -> Result<World, WorldError> {
        let mut products = Vec::with_capacity(ids.len());
        let mut states = Vec::with_capacity(ids.len());
        for &i in ids {
            if i >= self.products.len() {
                return Err(WorldError::UnknownProduct(i));
            }
            products.push(self.products[i].clone());
            states.push(self.states[i].clone());
        }
        World::new(self.max_lead, products, states, self.holidays.clone(), self.ground_truth.clone())
    }

    /// Mean demand of product `i` over periods `[0, end)`.
    pub fn mean_demand(&self, i: usize, end: usize) -> f64 {
        let end = end.min(self.horizon());
        if end == 0 {
            return 0.0;
        }
        self.states[i][..end].iter().map(|s| s.demand).sum::<f64>() / end as f64
    }

    /// Replaces one period's state after validating it.
    pub fn replace_state(&mut self, i: usize, t: usize, state: ExogenousState) -> Result<(), WorldError> {
        if i >= self.products.len() {
            return Err(WorldError::UnknownProduct(i));
        }
        if t >= self.horizon() {
            return Err(WorldError::PeriodOutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        state.validate(i, t, self.max_lead)?;
        self.states[i][t] = state;
        Ok(())
    }
}
