use rand::Rng;

use crate::engine::{Builder, NodeId, ParamStore, Tape, Tensor};
use crate::metrics::nearest_rank_quantile;
use crate::seed;
use crate::world::World;

use super::{column_for, Observation, Policy, PolicyError};

/// Order-up-to rule `a = max(S_i - (on_hand + outstanding), 0)`.
#[derive(Clone, Debug)]
pub struct BaseStockPolicy {
    name: String,
    targets: Vec<f64>,
    empty: ParamStore<f64>,
}

impl BaseStockPolicy {
    pub fn new(targets: Vec<f64>) -> Result<Self, PolicyError> {
        if targets.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(PolicyError::Invalid(format!("targets must be nonnegative: {targets:?}")));
        }
        Ok(Self {
            name: "newsvendor".into(),
            targets,
            empty: ParamStore::new(),
        })
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Host-side rule for a single state.
    pub fn action(on_hand: f64, outstanding: f64, target: f64) -> f64 {
        (target - (on_hand + outstanding)).max(0.0)
    }
}

impl Policy for BaseStockPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn params(&self) -> &ParamStore<f64> {
        &self.empty
    }

    fn act(&self, tape: &mut Tape<'_, f64>, obs: &Observation) -> Result<NodeId, PolicyError> {
        let s = column_for(tape, &obs.products, &self.targets)?;
        let position = tape.add(obs.inventory, obs.outstanding);
        let gap = tape.sub(s, position);
        Ok(tape.relu(gap))
    }
}

/// `(p - c) / p` clipped into `(0, 1)`; 0.5 with a warning when `p = 0`.
pub fn critical_ratio(price: f64, cost: f64) -> f64 {
    if !(price > 0.0) {
        log::warn!("price {price} is not positive; using the median as newsvendor quantile");
        return 0.5;
    }
    ((price - cost) / price).clamp(1e-6, 1.0 - 1e-6)
}

/// Per-product target: the nearest-rank `q`-quantile of `window`-period
/// rolling demand sums. `q = None` uses each product's mean critical ratio.
pub fn fit_base_stock(world: &World, q: Option<f64>, window: usize) -> Result<Vec<f64>, PolicyError> {
    if window == 0 {
        return Err(PolicyError::Invalid("protection window must be at least 1".into()));
    }
    if let Some(q) = q {
        if !(q > 0.0 && q < 1.0) {
            return Err(PolicyError::Invalid(format!("quantile {q} outside (0, 1)")));
        }
    }
    (0..world.num_products())
        .map(|i| {
            let states = world.states(i);
            let q = q.unwrap_or_else(|| {
                let n = states.len() as f64;
                let price = states.iter().map(|s| s.price).sum::<f64>() / n;
                let cost = states.iter().map(|s| s.cost).sum::<f64>() / n;
                critical_ratio(price, cost)
            });
            let demand: Vec<f64> = states.iter().map(|s| s.demand).collect();
            let w = window.min(demand.len());
            let sums: Vec<f64> = demand.windows(w).map(|x| x.iter().sum()).collect();
            let ones = vec![1.0; sums.len()];
            Ok(nearest_rank_quantile(&sums, &ones, q).unwrap_or(0.0))
        })
        .collect()
}

/// Base stock with multiplicative log-normal noise on the target and
/// occasional extra orders; used to generate varied order histories.
#[derive(Clone, Debug)]
pub struct NoisyBaseStock {
    targets: Vec<f64>,
    scales: Vec<f64>,
    sigma: f64,
    burst_prob: f64,
    seed: u64,
    empty: ParamStore<f64>,
}

impl NoisyBaseStock {
    pub fn new(targets: Vec<f64>, scales: Vec<f64>, sigma: f64, burst_prob: f64, seed: u64) -> Self {
        Self {
            targets,
            scales,
            sigma,
            burst_prob,
            seed,
            empty: ParamStore::new(),
        }
    }

    fn noise(&self, product: usize, t: usize) -> (f64, f64) {
        let mut rng = seed::rng_for(self.seed, &[product as u64, t as u64]);
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let m = (self.sigma * z - 0.5 * self.sigma * self.sigma).exp();
        let burst = if rng.random::<f64>() < self.burst_prob {
            rng.random::<f64>() * 3.0 * self.scales.get(product).copied().unwrap_or(1.0)
        } else {
            0.0
        };
        (m, burst)
    }
}

impl Policy for NoisyBaseStock {
    fn name(&self) -> &str {
        "noisy_base_stock"
    }

    fn params(&self) -> &ParamStore<f64> {
        &self.empty
    }

    fn act(&self, tape: &mut Tape<'_, f64>, obs: &Observation) -> Result<NodeId, PolicyError> {
        let mut targets = Vec::with_capacity(obs.batch());
        let mut bursts = Vec::with_capacity(obs.batch());
        for &i in &obs.products {
            let s = *self.targets.get(i).ok_or(PolicyError::UnknownProduct(i))?;
            let (m, burst) = self.noise(i, obs.t);
            targets.push(s * m);
            bursts.push(burst);
        }
        let s = tape.constant(Tensor::column(targets));
        let position = tape.add(obs.inventory, obs.outstanding);
        let gap = tape.sub(s, position);
        let base = tape.relu(gap);
        let extra = tape.constant(Tensor::column(bursts));
        Ok(tape.add(base, extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, DemandRegime, WorldConfig};

    #[test]
    fn order_up_to_examples() {
        assert_eq!(BaseStockPolicy::action(12.0, 0.0, 10.0), 0.0);
        assert_eq!(BaseStockPolicy::action(3.0, 2.0, 10.0), 5.0);
        assert_eq!(BaseStockPolicy::action(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn critical_ratio_arithmetic() {
        assert_eq!(critical_ratio(2.0, 1.0), 0.5);
        assert_eq!(critical_ratio(0.0, 1.0), 0.5);
        assert!(critical_ratio(1.0, 0.0) < 1.0);
    }

    fn world_with_demand(values: Vec<f64>) -> World {
        let mut cfg = WorldConfig::single_period(1, vec![1.0], vec![1.0], 2.0, 1.0);
        cfg.horizon = values.len();
        let mut w = generate_world(&cfg, 0).unwrap();
        for (t, d) in values.into_iter().enumerate() {
            let mut s = w.state(0, t).clone();
            s.demand = d;
            w.replace_state(0, t, s).unwrap();
        }
        w
    }

    #[test]
    fn constant_demand_target() {
        let w = world_with_demand(vec![4.0; 12]);
        assert_eq!(fit_base_stock(&w, Some(0.9), 3).unwrap(), vec![12.0]);
    }

    #[test]
    fn nearest_rank_median_target() {
        let w = world_with_demand((1..=10).map(f64::from).collect());
        assert_eq!(fit_base_stock(&w, Some(0.5), 1).unwrap(), vec![5.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let w = world_with_demand(vec![1.0; 3]);
        assert!(fit_base_stock(&w, Some(1.0), 1).is_err());
        assert!(fit_base_stock(&w, Some(0.5), 0).is_err());
    }

    #[test]
    fn default_quantile_uses_prices() {
        let mut cfg = WorldConfig::single_period(1, vec![1.0], vec![1.0], 2.0, 1.0);
        cfg.horizon = 10;
        cfg.demand = DemandRegime::Discrete {
            values: vec![1.0, 9.0],
            probs: vec![0.5, 0.5],
        };
        let w = generate_world(&cfg, 3).unwrap();
        let s = fit_base_stock(&w, None, 1).unwrap()[0];
        assert!(s == 1.0 || s == 9.0);
    }
}
