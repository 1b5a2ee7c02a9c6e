use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExogenousState, GroundTruth, Product, Supply, World, WorldError};
use crate::postprocess::VendorConstraints;

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandRegime {
    /// Gamma-Poisson counts around `base * (1 + amplitude * sin(2 pi t / period + phase))`,
    /// lifted by `holiday_lift` on holidays. `base` and `phase` are drawn per product.
    Seasonal {
        base_min: f64,
        base_max: f64,
        amplitude: f64,
        period: f64,
        noise_cv: f64,
        #[serde(default)]
        holiday_lift: f64,
    },
    /// IID draws from a finite distribution.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

/// Per-product constant price in `[price_min, price_max]` and cost as a
/// fraction of price in `[cost_ratio_min, cost_ratio_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EconomicsRegime {
    pub price_min: f64,
    pub price_max: f64,
    pub cost_ratio_min: f64,
    pub cost_ratio_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplyAtom {
    pub supply: Supply,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupplyRegime {
    Unlimited,
    /// `U_t = multiple * mean_demand * G`, `G` a unit-mean gamma with the
    /// given coefficient of variation; zero with probability `stockout_prob`.
    Capacity { multiple: f64, cv: f64, stockout_prob: f64 },
    Discrete { atoms: Vec<SupplyAtom> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharesAtom {
    pub shares: Vec<f64>,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SharesRegime {
    /// Everything arrives at one offset drawn from `lead_probs`.
    OneHot { lead_probs: Vec<f64> },
    /// Dirichlet shares over offsets; shares below `sparsify_below` are
    /// zeroed and the rest renormalized.
    Dirichlet {
        concentration: Vec<f64>,
        #[serde(default)]
        sparsify_below: f64,
    },
    /// A first shipment at an offset drawn from `first_lead_probs`, then
    /// `extra` more shipments (`extra` drawn from `extra_shipment_probs`),
    /// each `gap` offsets after the last (`gap - 1` drawn from `gap_probs`).
    /// Quantities split by a symmetric Dirichlet with `split_concentration`.
    MultiShipment {
        first_lead_probs: Vec<f64>,
        extra_shipment_probs: Vec<f64>,
        gap_probs: Vec<f64>,
        split_concentration: f64,
    },
    Discrete { atoms: Vec<SharesAtom> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRegime {
    pub min_order_qty: f64,
    pub batch_size: f64,
    pub max_order_qty: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    #[serde(default)]
    pub name: String,
    pub products: usize,
    pub horizon: usize,
    pub max_lead: usize,
    #[serde(default = "one")]
    pub vendors: usize,
    #[serde(default = "one")]
    pub groups: usize,
    pub demand: DemandRegime,
    pub economics: EconomicsRegime,
    pub supply: SupplyRegime,
    pub shares: SharesRegime,
    #[serde(default)]
    pub constraints: ConstraintRegime,
    /// Holiday every `holiday_every` periods starting at `holiday_offset`; 0 disables.
    #[serde(default)]
    pub holiday_every: usize,
    #[serde(default)]
    pub holiday_offset: usize,
    /// Initial inventory in periods of mean demand.
    #[serde(default)]
    pub initial_inventory_periods: f64,
    /// Per-vendor delay added to every shipment offset (clamped at `max_lead`).
    #[serde(default)]
    pub vendor_lead_shift: Vec<usize>,
}

fn check_probs(what: &str, probs: &[f64]) -> Result<(), WorldError> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(WorldError::InvalidConfig(format!("{what} must be a probability vector, got {probs:?}")));
    }
    Ok(())
}

fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn unit_gamma(rng: &mut impl Rng, cv: f64) -> f64 {
    if cv <= 0.0 {
        return 1.0;
    }
    let shape = 1.0 / (cv * cv);
    Gamma::new(shape, 1.0 / shape).expect("positive shape").sample(rng)
}

fn dirichlet(rng: &mut impl Rng, alpha: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|d| d / total).collect()
    } else {
        let mut v = vec![0.0; alpha.len()];
        v[0] = 1.0;
        v
    }
}

/// Moves each share `shift` offsets later, piling overflow onto the last offset.
fn shift_shares(shares: Vec<f64>, shift: usize) -> Vec<f64> {
    if shift == 0 {
        return shares;
    }
    let last = shares.len() - 1;
    let mut out = vec![0.0; shares.len()];
    for (j, r) in shares.into_iter().enumerate() {
        out[(j + shift).min(last)] += r;
    }
    out
}

/// Rescales so the shares sum to one up to rounding in the last term.
fn normalize(mut shares: Vec<f64>) -> Vec<f64> {
    let total: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|r| *r /= total);
    shares
}

impl WorldConfig {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| WorldError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidConfig(m));
        if self.products == 0 {
            return bad("product set is empty".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.vendors == 0 || self.groups == 0 {
            return bad("vendors and groups must be positive".into());
        }
        let l1 = self.max_lead + 1;
        match &self.demand {
            DemandRegime::Seasonal {
                base_min,
                base_max,
                amplitude,
                period,
                noise_cv,
                holiday_lift,
            } => {
                if !(0.0 <= *base_min && base_min <= base_max && base_max.is_finite()) {
                    return bad(format!("demand base range [{base_min}, {base_max}]"));
                }
                if !(0.0..=1.0).contains(amplitude) || !(*period > 0.0) || !(*noise_cv >= 0.0) || !(*holiday_lift >= 0.0)
                {
                    return bad("seasonal demand parameters out of range".into());
                }
            }
            DemandRegime::Discrete { values, probs } => {
                check_probs("demand probs", probs)?;
                if values.len() != probs.len() || values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return bad("demand values must be nonnegative and match probs".into());
                }
            }
        }
        let e = &self.economics;
        if !(0.0 <= e.price_min && e.price_min <= e.price_max && e.price_max.is_finite())
            || !(0.0 <= e.cost_ratio_min && e.cost_ratio_min <= e.cost_ratio_max && e.cost_ratio_max.is_finite())
        {
            return bad("economics ranges must be ordered and nonnegative".into());
        }
        match &self.supply {
            SupplyRegime::Unlimited => {}
            SupplyRegime::Capacity {
                multiple,
                cv,
                stockout_prob,
            } => {
                if !(*multiple >= 0.0 && *cv >= 0.0 && (0.0..=1.0).contains(stockout_prob)) {
                    return bad("capacity parameters out of range".into());
                }
            }
            SupplyRegime::Discrete { atoms } => {
                check_probs("supply atom probs", &atoms.iter().map(|a| a.prob).collect::<Vec<_>>())?;
                if atoms.iter().any(|a| matches!(a.supply, Supply::Finite(u) if !(u >= 0.0 && u.is_finite()))) {
                    return bad("supply atoms must be nonnegative".into());
                }
            }
        }
        match &self.shares {
            SharesRegime::OneHot { lead_probs } => {
                check_probs("lead probs", lead_probs)?;
                if lead_probs.len() != l1 {
                    return bad(format!("lead probs need {l1} entries"));
                }
            }
            SharesRegime::Dirichlet { concentration, .. } => {
                if concentration.len() != l1 || concentration.iter().any(|a| !(*a > 0.0)) {
                    return bad(format!("concentration needs {l1} positive entries"));
                }
            }
            SharesRegime::MultiShipment {
                first_lead_probs,
                extra_shipment_probs,
                gap_probs,
                split_concentration,
            } => {
                check_probs("first lead probs", first_lead_probs)?;
                check_probs("extra shipment probs", extra_shipment_probs)?;
                check_probs("gap probs", gap_probs)?;
                if first_lead_probs.len() != l1 || !(*split_concentration > 0.0) {
                    return bad(format!("first lead probs need {l1} entries and positive split concentration"));
                }
            }
            SharesRegime::Discrete { atoms } => {
                check_probs("shares atom probs", &atoms.iter().map(|a| a.prob).collect::<Vec<_>>())?;
                for a in atoms {
                    let s: f64 = a.shares.iter().sum();
                    if a.shares.len() != l1 || a.shares.iter().any(|r| !(*r >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                        return bad(format!("shares atom {:?} must have {l1} entries summing to 1", a.shares));
                    }
                }
            }
        }
        let c = &self.constraints;
        VendorConstraints::new(c.min_order_qty, c.batch_size, c.max_order_qty)
            .map_err(|e| WorldError::InvalidConfig(e.to_string()))?;
        if !(self.initial_inventory_periods >= 0.0 && self.initial_inventory_periods.is_finite()) {
            return bad("initial inventory must be nonnegative".into());
        }
        Ok(())
    }

    pub fn vendor_shift(&self, vendor: usize) -> usize {
        if self.vendor_lead_shift.is_empty() {
            0
        } else {
            self.vendor_lead_shift[vendor % self.vendor_lead_shift.len()]
        }
    }

    pub fn holidays(&self) -> Vec<usize> {
        if self.holiday_every == 0 {
            return Vec::new();
        }
        (self.holiday_offset..self.horizon).step_by(self.holiday_every).collect()
    }

    /// Joint ground-truth distribution of `(supply, shares)` for a product of
    /// `vendor`, when both processes are finite; `None` otherwise.
    pub fn enumerable_arrival_atoms(&self, vendor: usize) -> Option<Vec<(f64, Supply, Vec<f64>)>> {
        let supply: Vec<(f64, Supply)> = match &self.supply {
            SupplyRegime::Unlimited => vec![(1.0, Supply::Unlimited)],
            SupplyRegime::Discrete { atoms } => atoms.iter().map(|a| (a.prob, a.supply)).collect(),
            SupplyRegime::Capacity { .. } => return None,
        };
        let l1 = self.max_lead + 1;
        let shares: Vec<(f64, Vec<f64>)> = match &self.shares {
            SharesRegime::OneHot { lead_probs } => lead_probs
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let mut v = vec![0.0; l1];
                    v[j] = 1.0;
                    (p, v)
                })
                .collect(),
            SharesRegime::Discrete { atoms } => atoms.iter().map(|a| (a.prob, a.shares.clone())).collect(),
            _ => return None,
        };
        let shift = self.vendor_shift(vendor);
        let mut out = Vec::new();
        for (ps, u) in &supply {
            for (pr, rho) in &shares {
                if ps * pr > 0.0 {
                    out.push((ps * pr, *u, shift_shares(rho.clone(), shift)));
                }
            }
        }
        Some(out)
    }

    fn mean_demand(&self, base: f64) -> f64 {
        match &self.demand {
            DemandRegime::Seasonal { .. } => base,
            DemandRegime::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    fn sample_shares(&self, rng: &mut impl Rng, shift: usize) -> Vec<f64> {
        let l1 = self.max_lead + 1;
        let raw = match &self.shares {
            SharesRegime::OneHot { lead_probs } => {
                let mut v = vec![0.0; l1];
                v[sample_index(rng, lead_probs)] = 1.0;
                v
            }
            SharesRegime::Dirichlet {
                concentration,
                sparsify_below,
            } => {
                let mut v = dirichlet(rng, concentration);
                if *sparsify_below > 0.0 {
                    let top = v.iter().cloned().fold(0.0, f64::max);
                    for r in v.iter_mut() {
                        if *r < *sparsify_below && *r < top {
                            *r = 0.0;
                        }
                    }
                    v = normalize(v);
                }
                v
            }
            SharesRegime::MultiShipment {
                first_lead_probs,
                extra_shipment_probs,
                gap_probs,
                split_concentration,
            } => {
                let first = sample_index(rng, first_lead_probs);
                let extra = sample_index(rng, extra_shipment_probs);
                let mut offsets = vec![first];
                for _ in 0..extra {
                    let next = offsets.last().expect("nonempty") + 1 + sample_index(rng, gap_probs);
                    if next > self.max_lead {
                        break;
                    }
                    offsets.push(next);
                }
                let split = dirichlet(rng, &vec![*split_concentration; offsets.len()]);
                let mut v = vec![0.0; l1];
                for (o, s) in offsets.iter().zip(split) {
                    v[*o] += s;
                }
                v
            }
            SharesRegime::Discrete { atoms } => {
                let probs: Vec<f64> = atoms.iter().map(|a| a.prob).collect();
                atoms[sample_index(rng, &probs)].shares.clone()
            }
        };
        shift_shares(raw, shift)
    }

    fn sample_supply(&self, rng: &mut impl Rng, mean_demand: f64) -> Supply {
        match &self.supply {
            SupplyRegime::Unlimited => Supply::Unlimited,
            SupplyRegime::Capacity {
                multiple,
                cv,
                stockout_prob,
            } => {
                let out = rng.random::<f64>() < *stockout_prob;
                let g = unit_gamma(rng, *cv);
                Supply::Finite(if out { 0.0 } else { multiple * mean_demand * g })
            }
            SupplyRegime::Discrete { atoms } => {
                let probs: Vec<f64> = atoms.iter().map(|a| a.prob).collect();
                atoms[sample_index(rng, &probs)].supply
            }
        }
    }

    fn sample_demand(&self, rng: &mut impl Rng, base: f64, phase: f64, t: usize, holiday: bool) -> f64 {
        match &self.demand {
            DemandRegime::Seasonal {
                amplitude,
                period,
                noise_cv,
                holiday_lift,
                ..
            } => {
                let season = 1.0 + amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin();
                let lift = if holiday { 1.0 + holiday_lift } else { 1.0 };
                let mean = base * season * lift * unit_gamma(rng, *noise_cv);
                if mean <= 0.0 {
                    0.0
                } else {
                    Poisson::new(mean).expect("positive mean").sample(rng)
                }
            }
            DemandRegime::Discrete { values, probs } => values[sample_index(rng, probs)],
        }
    }

    /// Single product, `T = 20`, `L = 2`, demand in {0, 1, 2}, two supply
    /// atoms and three share atoms, so every arrival distribution is enumerable.
    pub fn discrete_small() -> Self {
        Self {
            name: "discrete-small".into(),
            products: 1,
            horizon: 20,
            max_lead: 2,
            vendors: 1,
            groups: 1,
            demand: DemandRegime::Discrete {
                values: vec![0.0, 1.0, 2.0],
                probs: vec![0.3, 0.4, 0.3],
            },
            economics: EconomicsRegime {
                price_min: 3.0,
                price_max: 3.0,
                cost_ratio_min: 1.0 / 3.0,
                cost_ratio_max: 1.0 / 3.0,
            },
            supply: SupplyRegime::Discrete {
                atoms: vec![
                    SupplyAtom {
                        supply: Supply::Unlimited,
                        prob: 0.8,
                    },
                    SupplyAtom {
                        supply: Supply::Finite(1.0),
                        prob: 0.2,
                    },
                ],
            },
            shares: SharesRegime::Discrete {
                atoms: vec![
                    SharesAtom {
                        shares: vec![1.0, 0.0, 0.0],
                        prob: 0.5,
                    },
                    SharesAtom {
                        shares: vec![0.0, 1.0, 0.0],
                        prob: 0.3,
                    },
                    SharesAtom {
                        shares: vec![0.0, 0.5, 0.5],
                        prob: 0.2,
                    },
                ],
            },
            constraints: ConstraintRegime {
                min_order_qty: 0.0,
                batch_size: 1.0,
                max_order_qty: Some(2.0),
            },
            holiday_every: 0,
            holiday_offset: 0,
            initial_inventory_periods: 0.0,
            vendor_lead_shift: Vec::new(),
        }
    }

    /// Classical lead-time world: everything arrives `lead` periods after the
    /// order, supply is unlimited and orders are unconstrained.
    pub fn fixed_lead(products: usize, horizon: usize, max_lead: usize, lead: usize) -> Self {
        let mut lead_probs = vec![0.0; max_lead + 1];
        lead_probs[lead.min(max_lead)] = 1.0;
        Self {
            name: "fixed-lead".into(),
            products,
            horizon,
            max_lead,
            vendors: 1,
            groups: 1,
            demand: DemandRegime::Seasonal {
                base_min: 4.0,
                base_max: 12.0,
                amplitude: 0.3,
                period: 26.0,
                noise_cv: 0.2,
                holiday_lift: 0.0,
            },
            economics: EconomicsRegime {
                price_min: 2.0,
                price_max: 4.0,
                cost_ratio_min: 0.4,
                cost_ratio_max: 0.7,
            },
            supply: SupplyRegime::Unlimited,
            shares: SharesRegime::OneHot { lead_probs },
            constraints: ConstraintRegime::default(),
            holiday_every: 0,
            holiday_offset: 0,
            initial_inventory_periods: 1.0,
            vendor_lead_shift: Vec::new(),
        }
    }

    /// Capacity-limited supply with stockouts, multi-shipment shares and
    /// seasonal demand with holidays.
    pub fn multi_shipment(products: usize, horizon: usize) -> Self {
        Self {
            name: "multi-shipment".into(),
            products,
            horizon,
            max_lead: 6,
            vendors: 3,
            groups: 2,
            demand: DemandRegime::Seasonal {
                base_min: 5.0,
                base_max: 25.0,
                amplitude: 0.3,
                period: 52.0,
                noise_cv: 0.25,
                holiday_lift: 0.5,
            },
            economics: EconomicsRegime {
                price_min: 2.0,
                price_max: 4.0,
                cost_ratio_min: 0.35,
                cost_ratio_max: 0.6,
            },
            supply: SupplyRegime::Capacity {
                multiple: 1.6,
                cv: 0.5,
                stockout_prob: 0.1,
            },
            shares: SharesRegime::MultiShipment {
                first_lead_probs: vec![0.0, 0.25, 0.4, 0.25, 0.1, 0.0, 0.0],
                extra_shipment_probs: vec![0.45, 0.35, 0.2],
                gap_probs: vec![0.6, 0.3, 0.1],
                split_concentration: 2.0,
            },
            constraints: ConstraintRegime::default(),
            holiday_every: 13,
            holiday_offset: 6,
            initial_inventory_periods: 2.0,
            vendor_lead_shift: vec![0, 1, 0],
        }
    }

    /// One period per product, lead time 0, unlimited supply: each product
    /// is an independent newsvendor problem.
    pub fn single_period(products: usize, values: Vec<f64>, probs: Vec<f64>, price: f64, cost: f64) -> Self {
        Self {
            name: "single-period".into(),
            products,
            horizon: 1,
            max_lead: 0,
            vendors: 1,
            groups: 1,
            demand: DemandRegime::Discrete { values, probs },
            economics: EconomicsRegime {
                price_min: price,
                price_max: price,
                cost_ratio_min: cost / price,
                cost_ratio_max: cost / price,
            },
            supply: SupplyRegime::Unlimited,
            shares: SharesRegime::OneHot { lead_probs: vec![1.0] },
            constraints: ConstraintRegime::default(),
            holiday_every: 0,
            holiday_offset: 0,
            initial_inventory_periods: 0.0,
            vendor_lead_shift: Vec::new(),
        }
    }
}

/// Deterministic in `(config, seed)`. Static product parameters come from
/// the base stream; product `i`'s series from stream `i + 1`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let holidays = config.holidays();
    let mut products = Vec::with_capacity(config.products);
    let mut states = Vec::with_capacity(config.products);
    let constraints = VendorConstraints {
        min_order_qty: config.constraints.min_order_qty,
        batch_size: config.constraints.batch_size,
        max_order_qty: config.constraints.max_order_qty,
    };
    for i in 0..config.products {
        let (base, phase) = match &config.demand {
            DemandRegime::Seasonal { base_min, base_max, .. } => (
                base_min + (base_max - base_min) * rng.random::<f64>(),
                std::f64::consts::TAU * rng.random::<f64>(),
            ),
            DemandRegime::Discrete { .. } => (0.0, 0.0),
        };
        let e = &config.economics;
        let price = e.price_min + (e.price_max - e.price_min) * rng.random::<f64>();
        let cost = price * (e.cost_ratio_min + (e.cost_ratio_max - e.cost_ratio_min) * rng.random::<f64>());
        let vendor = i % config.vendors;
        let group = (i / config.vendors) % config.groups;
        let mean = config.mean_demand(base);
        products.push(Product {
            vendor,
            group,
            initial_inventory: (config.initial_inventory_periods * mean).round(),
        });

        let mut stream = ChaCha8Rng::seed_from_u64(seed);
        stream.set_stream(i as u64 + 1);
        let shift = config.vendor_shift(vendor);
        let seq = (0..config.horizon)
            .map(|t| {
                let holiday = holidays.binary_search(&t).is_ok();
                let demand = config.sample_demand(&mut stream, base, phase, t, holiday);
                let supply = config.sample_supply(&mut stream, mean);
                let shares = config.sample_shares(&mut stream, shift);
                ExogenousState {
                    demand,
                    price,
                    cost,
                    supply,
                    constraints,
                    shares,
                }
            })
            .collect();
        states.push(seq);
    }
    World::new(
        config.max_lead,
        products,
        states,
        holidays,
        Some(GroundTruth {
            config: config.clone(),
            seed,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = WorldConfig::multi_shipment(4, 30);
        let a = generate_world(&cfg, 7).unwrap();
        let b = generate_world(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_world(&cfg, 8).unwrap());
    }

    #[test]
    fn fixed_lead_world_has_unit_shares() {
        let w = generate_world(&WorldConfig::fixed_lead(3, 10, 4, 2), 1).unwrap();
        for i in 0..3 {
            for s in w.states(i) {
                assert_eq!(s.shares, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
                assert!(s.supply.is_unlimited());
            }
        }
    }

    #[test]
    fn shares_normalized_in_every_regime() {
        for cfg in [WorldConfig::multi_shipment(3, 50), WorldConfig::discrete_small()] {
            let w = generate_world(&cfg, 3).unwrap();
            for i in 0..w.num_products() {
                for s in w.states(i) {
                    assert!((s.shares.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
        }
        let mut cfg = WorldConfig::multi_shipment(2, 40);
        cfg.shares = SharesRegime::Dirichlet {
            concentration: vec![0.5; 7],
            sparsify_below: 0.1,
        };
        let w = generate_world(&cfg, 3).unwrap();
        for s in w.states(1) {
            assert!((s.shares.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn discrete_small_shape() {
        let w = generate_world(&WorldConfig::discrete_small(), 5).unwrap();
        assert_eq!((w.num_products(), w.horizon(), w.max_lead()), (1, 20, 2));
        for s in w.states(0) {
            assert!([0.0, 1.0, 2.0].contains(&s.demand));
        }
        let atoms = WorldConfig::discrete_small().enumerable_arrival_atoms(0).unwrap();
        assert_eq!(atoms.len(), 6);
        assert!((atoms.iter().map(|a| a.0).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = WorldConfig::discrete_small();
        cfg.products = 0;
        assert!(generate_world(&cfg, 0).is_err());
        let mut cfg = WorldConfig::discrete_small();
        cfg.horizon = 0;
        assert!(cfg.validate().is_err());
        assert!(WorldConfig::from_json(&WorldConfig::discrete_small().to_json().replace("\"horizon\": 20", "\"horizon\": -3")).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = WorldConfig::multi_shipment(5, 20);
        let back = WorldConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn vendor_shift_delays_shipments() {
        assert_eq!(shift_shares(vec![0.5, 0.5, 0.0], 1), vec![0.0, 0.5, 0.5]);
        assert_eq!(shift_shares(vec![0.0, 0.5, 0.5], 1), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn infinite_supply_regime() {
        let w = generate_world(&WorldConfig::fixed_lead(2, 5, 2, 1), 9).unwrap();
        assert!(w.states(0).iter().all(|s| s.supply == Supply::Unlimited));
    }
}
