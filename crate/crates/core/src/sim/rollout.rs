use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    FillSampler, FrozenFills, Mode, PeriodRecord, RewardConfig, SampledFills, SimError, Trajectory, VltModel,
};
use crate::engine::{Builder, Gradients, NodeId, ParamStore, Tape, Tensor};
use crate::policy::{Observation, PeriodObs, Policy};
use crate::postprocess::{PostProcessor, RoundingPostProcessor};
use crate::seed;
use crate::world::{slice_history_window, World, HOLIDAY_DISTANCE_CAP};

static ROUNDING: RoundingPostProcessor = RoundingPostProcessor;

/// Stream tags keeping sampler and lead-time draws apart.
const STREAM_FILLS: u64 = 1;
const STREAM_LEAD: u64 = 2;

#[derive(Clone, Copy)]
pub enum Dynamics<'a> {
    ReplayTruth,
    Genqot(&'a dyn FillSampler),
    Vlt(&'a VltModel),
}

impl Dynamics<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Dynamics::ReplayTruth => Mode::ReplayTruth,
            Dynamics::Genqot(_) => Mode::Genqot,
            Dynamics::Vlt(_) => Mode::VltModel,
        }
    }
}

#[derive(Clone)]
pub struct RolloutSpec<'a> {
    pub world: &'a World,
    pub products: Vec<usize>,
    pub policy: &'a dyn Policy,
    /// Overrides the policy's own parameters (finite-difference probes).
    pub params: Option<&'a ParamStore<f64>>,
    pub dynamics: Dynamics<'a>,
    pub postprocessor: &'a dyn PostProcessor,
    pub reward: RewardConfig,
    pub horizon: Option<usize>,
    pub seed: u64,
    pub differentiable: bool,
    /// Objective weight per product in `products`; default `1 / batch`.
    pub weights: Option<Vec<f64>>,
}

impl<'a> RolloutSpec<'a> {
    pub fn new(world: &'a World, policy: &'a dyn Policy, dynamics: Dynamics<'a>) -> Self {
        Self {
            world,
            products: (0..world.num_products()).collect(),
            policy,
            params: None,
            dynamics,
            postprocessor: &ROUNDING,
            reward: RewardConfig::default(),
            horizon: None,
            seed: 0,
            differentiable: false,
            weights: None,
        }
    }

    pub fn products(mut self, products: Vec<usize>) -> Self {
        self.products = products;
        self
    }

    pub fn params(mut self, params: &'a ParamStore<f64>) -> Self {
        self.params = Some(params);
        self
    }

    pub fn postprocessor(mut self, p: &'a dyn PostProcessor) -> Self {
        self.postprocessor = p;
        self
    }

    pub fn reward(mut self, reward: RewardConfig) -> Self {
        self.reward = reward;
        self
    }

    pub fn horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn differentiable(mut self, on: bool) -> Self {
        self.differentiable = on;
        self
    }

    pub fn weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }
}

pub struct RolloutResult {
    pub trajectories: Vec<Trajectory>,
    /// Weighted sum of per-product discounted rewards.
    pub objective: f64,
    /// Gradient of `objective` with respect to the policy parameters.
    pub gradients: Option<Gradients<f64>>,
    /// Fills drawn in generative mode, keyed by `(product, t)`.
    pub fills: FrozenFills,
}

fn column(tape: &mut Tape<'_, f64>, values: Vec<f64>) -> NodeId {
    tape.constant(Tensor::column(values))
}

struct OpenOrder {
    placed: usize,
    remaining: NodeId,
    arrivals: Vec<NodeId>,
}

/// Simulates a batch of products jointly on one tape. Products interact
/// only through shared policy parameters.
pub fn rollout_batch(spec: &RolloutSpec<'_>) -> Result<RolloutResult, SimError> {
    spec.reward.validate()?;
    let world = spec.world;
    let horizon = spec.horizon.unwrap_or(world.horizon());
    if horizon > world.horizon() {
        return Err(SimError::Horizon {
            requested: horizon,
            available: world.horizon(),
        });
    }
    let products = &spec.products;
    if products.is_empty() {
        return Err(SimError::Invalid("empty product batch".into()));
    }
    if let Some(&i) = products.iter().find(|&&i| i >= world.num_products()) {
        return Err(SimError::UnknownProduct(i));
    }
    let batch = products.len();
    let weights = spec.weights.clone().unwrap_or_else(|| vec![1.0 / batch as f64; batch]);
    if weights.len() != batch {
        return Err(SimError::Invalid(format!("{} weights for {batch} products", weights.len())));
    }
    let lmax = world.max_lead();
    let gamma = spec.reward.gamma;
    let mode = spec.dynamics.mode();
    let window = spec.policy.window();

    let params = spec.params.unwrap_or(spec.policy.params());
    let mut tape = Tape::new(params);
    let zero = tape.constant(Tensor::zeros(&[batch, 1]));
    let mut inventory = column(&mut tape, products.iter().map(|&i| world.product(i).initial_inventory).collect());
    let mut pipeline: Vec<NodeId> = vec![zero; lmax + 1];
    let mut open: Vec<OpenOrder> = Vec::new();
    let mut history: Vec<PeriodObs> = Vec::new();
    let pad = PeriodObs {
        demand: zero,
        action: zero,
        received: zero,
        holiday: zero,
    };
    let mut actions_seen: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon); batch];
    let mut received_seen: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon); batch];
    let mut objective_col = zero;
    let mut records: Vec<Vec<PeriodRecord>> = vec![Vec::with_capacity(horizon); batch];
    let mut frozen = FrozenFills::new();

    for t in 0..horizon {
        let states: Vec<_> = products.iter().map(|&i| world.state(i, t)).collect();

        let mut outstanding = zero;
        for o in &open {
            outstanding = tape.add(outstanding, o.remaining);
        }
        let mut win: Vec<PeriodObs> = history[history.len().saturating_sub(window)..].to_vec();
        while win.len() < window {
            win.insert(0, pad);
        }
        let hd = world.holiday_distance(t, HOLIDAY_DISTANCE_CAP) as f64;
        let holiday_distance = tape.constant(Tensor::filled(&[batch, 1], hd));
        let price = column(&mut tape, states.iter().map(|s| s.price).collect());
        let cost = column(&mut tape, states.iter().map(|s| s.cost).collect());
        let obs = Observation {
            t,
            products: products.clone(),
            inventory,
            outstanding,
            window: win,
            holiday_distance,
            price,
            cost,
        };
        let action = spec.policy.act(&mut tape, &obs)?;
        let a_vals = tape.values_of(action)?;
        if a_vals.len() != batch {
            return Err(SimError::Invalid(format!("policy returned {} values for {batch} products", a_vals.len())));
        }
        for (b, &a) in a_vals.iter().enumerate() {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(SimError::BadAction {
                    product: products[b],
                    t,
                    value: a,
                });
            }
        }

        // processed order: forward value f_p(a), surrogate derivative in a
        let straight_through = |tape: &mut Tape<'_, f64>| -> Result<NodeId, SimError> {
            let fp = states
                .iter()
                .zip(&a_vals)
                .map(|(s, &a)| spec.postprocessor.apply(a, &s.constraints))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SimError::Invalid(e.to_string()))?;
            let slope: Vec<f64> = states
                .iter()
                .zip(&a_vals)
                .map(|(s, &a)| spec.postprocessor.surrogate_slope(a, &s.constraints))
                .collect();
            let fp = column(tape, fp);
            let detached = tape.stop_gradient(action);
            let delta = tape.sub(action, detached);
            let slope = column(tape, slope);
            let delta = tape.mul(delta, slope);
            Ok(tape.add(fp, delta))
        };

        let mut forced = vec![false; batch];
        let (processed, charged, arrivals): (NodeId, NodeId, Vec<NodeId>) = match spec.dynamics {
            Dynamics::ReplayTruth => {
                let processed = straight_through(&mut tape)?;
                let cap = column(
                    &mut tape,
                    states.iter().map(|s| s.supply.as_f64().min(f64::MAX)).collect(),
                );
                let filled = tape.min(processed, cap);
                let arrivals = (0..=lmax)
                    .map(|j| {
                        let rho = column(&mut tape, states.iter().map(|s| s.shares[j]).collect());
                        tape.mul(filled, rho)
                    })
                    .collect();
                let charged = match spec.reward.cost_basis {
                    super::CostBasis::ChargedOnFill => filled,
                    super::CostBasis::ChargedOnOrder => processed,
                };
                (processed, charged, arrivals)
            }
            Dynamics::Genqot(sampler) => {
                let w = sampler.history_window();
                let mut fills = vec![SampledFills {
                    fills: vec![0.0; lmax + 1],
                    forced_stop: false,
                }; batch];
                let live: Vec<usize> = (0..batch).filter(|&b| a_vals[b] > 0.0).collect();
                if !live.is_empty() {
                    let contexts = live
                        .iter()
                        .map(|&b| slice_history_window(world, products[b], t, w, &actions_seen[b], &received_seen[b]))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| SimError::Sampler(e.to_string()))?;
                    let acts: Vec<f64> = live.iter().map(|&b| a_vals[b]).collect();
                    let mut rngs: Vec<_> = live
                        .iter()
                        .map(|&b| seed::rng_for(spec.seed, &[STREAM_FILLS, products[b] as u64, t as u64]))
                        .collect();
                    let drawn = sampler.sample(&contexts, &acts, &mut rngs).map_err(SimError::Sampler)?;
                    for (&b, f) in live.iter().zip(drawn) {
                        if f.fills.len() != lmax + 1 {
                            return Err(SimError::Sampler(format!(
                                "{} fill rates, expected {}",
                                f.fills.len(),
                                lmax + 1
                            )));
                        }
                        fills[b] = f;
                    }
                }
                let mut total_fill = vec![0.0; batch];
                let arrivals = (0..=lmax)
                    .map(|j| {
                        let alpha: Vec<f64> = fills.iter().map(|f| f.fills[j]).collect();
                        for (tot, x) in total_fill.iter_mut().zip(&alpha) {
                            *tot += x;
                        }
                        let alpha = column(&mut tape, alpha);
                        tape.mul(action, alpha)
                    })
                    .collect::<Vec<_>>();
                let total = column(&mut tape, total_fill);
                let charged = match spec.reward.cost_basis {
                    super::CostBasis::ChargedOnFill => tape.mul(action, total),
                    super::CostBasis::ChargedOnOrder => action,
                };
                for (b, f) in fills.into_iter().enumerate() {
                    forced[b] = f.forced_stop;
                    frozen.insert(products[b], t, f);
                }
                (action, charged, arrivals)
            }
            Dynamics::Vlt(model) => {
                let processed = straight_through(&mut tape)?;
                let leads: Vec<usize> = products
                    .iter()
                    .map(|&i| model.sample_lead(i, &mut seed::rng_for(spec.seed, &[STREAM_LEAD, i as u64, t as u64])))
                    .collect();
                let arrivals = (0..=lmax)
                    .map(|j| {
                        let hit = column(&mut tape, leads.iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect());
                        tape.mul(processed, hit)
                    })
                    .collect();
                (processed, processed, arrivals)
            }
        };

        for (slot, &o) in pipeline.iter_mut().zip(&arrivals) {
            *slot = tape.add(*slot, o);
        }
        let received = pipeline.remove(0);
        pipeline.push(zero);

        // outstanding bookkeeping: orders placed within the last L periods
        let order_arrivals = arrivals.clone();
        let placed_remaining = tape.sub(processed, arrivals[0]);
        open.push(OpenOrder {
            placed: t,
            remaining: placed_remaining,
            arrivals,
        });
        for o in open.iter_mut() {
            let age = t - o.placed;
            if age >= 1 && age <= lmax {
                o.remaining = tape.sub(o.remaining, o.arrivals[age]);
            }
        }
        open.retain(|o| t + 1 - o.placed <= lmax);

        let demand = column(&mut tape, states.iter().map(|s| s.demand).collect());
        let on_hand = tape.add(inventory, received);
        let fulfilled = tape.min(on_hand, demand);
        let leftover = tape.sub(on_hand, demand);
        let next_inventory = tape.max(leftover, zero);
        let revenue = tape.mul(price, fulfilled);
        let spend = tape.mul(cost, charged);
        let reward = tape.sub(revenue, spend);
        let discounted = tape.scale(reward, gamma.powi(t as i32));
        objective_col = tape.add(objective_col, discounted);

        let holiday = if world.holidays().binary_search(&t).is_ok() { 1.0 } else { 0.0 };
        let holiday = tape.constant(Tensor::filled(&[batch, 1], holiday));
        history.push(PeriodObs {
            demand,
            action,
            received,
            holiday,
        });

        let read = |id: NodeId| tape.values_of(id);
        let (proc_v, charged_v, recv_v, onhand_v, ful_v, inv_v, rew_v) = (
            read(processed)?,
            read(charged)?,
            read(received)?,
            read(on_hand)?,
            read(fulfilled)?,
            read(next_inventory)?,
            read(reward)?,
        );
        let sched = order_arrivals
            .iter()
            .map(|&id| read(id))
            .collect::<Result<Vec<_>, _>>()?;
        for b in 0..batch {
            let scheduled: Vec<f64> = sched.iter().map(|col| col[b]).collect();
            let s = states[b];
            records[b].push(PeriodRecord {
                product: products[b],
                t,
                demand: s.demand,
                price: s.price,
                cost: s.cost,
                action: a_vals[b],
                processed: proc_v[b],
                charged: charged_v[b],
                scheduled,
                received: recv_v[b],
                on_hand_before: onhand_v[b],
                fulfilled: ful_v[b],
                lost_sales: s.demand - ful_v[b],
                inventory: inv_v[b],
                reward: rew_v[b],
                forced_stop: forced[b],
            });
            actions_seen[b].push(a_vals[b]);
            received_seen[b].push(recv_v[b]);
        }
        inventory = next_inventory;
    }

    let wcol = column(&mut tape, weights);
    let weighted = tape.mul(objective_col, wcol);
    let objective = tape.sum(weighted);
    tape.check()?;
    let totals = tape.values_of(objective_col)?;
    let objective_value = tape.value(objective)?.data()[0];
    let gradients = if spec.differentiable {
        Some(tape.gradient(objective)?)
    } else {
        None
    };
    let trajectories = records
        .into_iter()
        .enumerate()
        .map(|(b, recs)| Trajectory {
            product: products[b],
            mode,
            seed: spec.seed,
            gamma,
            records: recs,
            total: totals[b],
        })
        .collect();
    Ok(RolloutResult {
        trajectories,
        objective: objective_value,
        gradients,
        fills: frozen,
    })
}

/// Single-product rollout.
pub fn rollout(
    world: &World,
    product: usize,
    policy: &dyn Policy,
    dynamics: Dynamics<'_>,
    horizon: Option<usize>,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let mut spec = RolloutSpec::new(world, policy, dynamics)
        .products(vec![product])
        .seed(seed);
    spec.horizon = horizon;
    Ok(rollout_batch(&spec)?.trajectories.remove(0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub policy: String,
    pub mode: Mode,
    pub n_seeds: usize,
    /// Mean discounted reward per product, averaged over products and seeds.
    pub mean: f64,
    pub per_product: Vec<f64>,
    /// `per_seed[s][k]`: total for seed `s`, product `products[k]`.
    pub per_seed: Vec<Vec<f64>>,
    pub products: Vec<usize>,
    pub order_quantities: Vec<f64>,
    pub rewards: Vec<f64>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

/// Runs `n_seeds` rollouts of every product in `spec` (seed `s` uses
/// `derive(spec.seed, [s])`), in parallel across seeds.
pub fn evaluate_policy(spec: &RolloutSpec<'_>, n_seeds: usize) -> Result<EvalSummary, SimError> {
    if n_seeds == 0 {
        return Err(SimError::Invalid("n_seeds must be at least 1".into()));
    }
    let runs: Vec<RolloutResult> = (0..n_seeds)
        .into_par_iter()
        .map(|s| {
            let mut one = spec.clone();
            one.seed = seed::derive(spec.seed, &[s as u64]);
            one.differentiable = false;
            rollout_batch(&one)
        })
        .collect::<Result<_, _>>()?;
    let k = spec.products.len();
    let per_seed: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.trajectories.iter().map(|t| t.total).collect())
        .collect();
    let per_product: Vec<f64> = (0..k)
        .map(|j| per_seed.iter().map(|row| row[j]).sum::<f64>() / n_seeds as f64)
        .collect();
    let mean = per_product.iter().sum::<f64>() / k as f64;
    let mut order_quantities = Vec::new();
    let mut rewards = Vec::new();
    let mut trajectories = Vec::new();
    for r in runs {
        for tr in r.trajectories {
            for rec in &tr.records {
                order_quantities.push(rec.action);
                rewards.push(rec.reward);
            }
            trajectories.push(tr);
        }
    }
    Ok(EvalSummary {
        policy: spec.policy.name().to_string(),
        mode: spec.dynamics.mode(),
        n_seeds,
        mean,
        per_product,
        per_seed,
        products: spec.products.clone(),
        order_quantities,
        rewards,
        trajectories,
    })
}
