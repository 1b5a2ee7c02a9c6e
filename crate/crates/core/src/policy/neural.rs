use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{causal_conv, init_causal_conv, init_mlp, mlp, Axis, Builder, NodeId, Optimizer, ParamStore, Tape, Tensor};
use crate::postprocess::PostProcessor;
use crate::seed;
use crate::sim::{rollout_batch, Dynamics, RewardConfig, RolloutSpec};
use crate::world::{World, HOLIDAY_DISTANCE_CAP};

use super::{column_for, Observation, Policy, PolicyError};

pub const POLICY_BUNDLE_VERSION: u32 = 1;

const STEP_FEATURES: usize = 4;
const CURRENT_FEATURES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHyper {
    /// Past periods fed to the encoder.
    pub window: usize,
    pub conv_channels: usize,
    /// One causal-conv layer per entry.
    pub dilations: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl PolicyHyper {
    pub fn desk() -> Self {
        Self {
            window: 8,
            conv_channels: 8,
            dilations: vec![1, 2],
            hidden: vec![32],
        }
    }

    pub fn paper() -> Self {
        Self {
            window: 52,
            conv_channels: 32,
            dilations: vec![1, 2, 4, 8, 16],
            hidden: vec![512, 512],
        }
    }

    /// Memoryless network on current state only.
    pub fn stateless(hidden: Vec<usize>) -> Self {
        Self {
            window: 0,
            conv_channels: 0,
            dilations: Vec::new(),
            hidden,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.window > 0 && (self.dilations.is_empty() || self.conv_channels == 0) {
            return Err(PolicyError::Invalid("a history window needs at least one conv layer".into()));
        }
        if self.dilations.contains(&0) {
            return Err(PolicyError::Invalid("dilations must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(PolicyError::Invalid("hidden sizes must be positive".into()));
        }
        Ok(())
    }

    fn encoder_width(&self) -> usize {
        if self.window > 0 {
            self.conv_channels
        } else {
            0
        }
    }
}

/// History-conditioned policy shared by all products: a causal-conv encoder
/// over the recent window and an MLP head with a softplus output multiplied
/// by a per-product demand scale.
#[derive(Clone, Debug)]
pub struct NeuralPolicy {
    name: String,
    hyper: PolicyHyper,
    scales: Vec<f64>,
    params: ParamStore<f64>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    version: u32,
    name: String,
    hyper: PolicyHyper,
    scales: Vec<f64>,
}

impl NeuralPolicy {
    pub fn new(hyper: PolicyHyper, scales: Vec<f64>, seed: u64) -> Result<Self, PolicyError> {
        hyper.validate()?;
        if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(PolicyError::Invalid("product scales must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut ch = STEP_FEATURES;
        if hyper.window > 0 {
            for (k, _) in hyper.dilations.iter().enumerate() {
                init_causal_conv(&mut params, &format!("enc.{k}"), ch, hyper.conv_channels, &mut rng);
                ch = hyper.conv_channels;
            }
        }
        let mut sizes = vec![hyper.encoder_width() + CURRENT_FEATURES];
        sizes.extend(&hyper.hidden);
        init_mlp(&mut params, "mlp", &sizes, &mut rng);
        params.init_dense("head", *sizes.last().expect("nonempty"), 1, &mut rng);
        Ok(Self {
            name: "dbp".into(),
            hyper,
            scales,
            params,
        })
    }

    /// Scales from each product's mean demand over the world's horizon.
    pub fn for_world(world: &World, hyper: PolicyHyper, seed: u64) -> Result<Self, PolicyError> {
        let scales = (0..world.num_products())
            .map(|i| world.mean_demand(i, world.horizon()).max(1e-3))
            .collect();
        Self::new(hyper, scales, seed)
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn hyper(&self) -> &PolicyHyper {
        &self.hyper
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore<f64>) {
        self.params = params;
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PolicyError> {
        let dir = dir.as_ref();
        let bundle = |e: std::io::Error| PolicyError::Bundle(e.to_string());
        fs::create_dir_all(dir).map_err(bundle)?;
        self.params.save(dir.join("params.bin"))?;
        let meta = BundleMeta {
            version: POLICY_BUNDLE_VERSION,
            name: self.name.clone(),
            hyper: self.hyper.clone(),
            scales: self.scales.clone(),
        };
        let text = serde_json::to_string_pretty(&meta).map_err(|e| PolicyError::Bundle(e.to_string()))?;
        fs::write(dir.join("policy.json"), text).map_err(bundle)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("policy.json")).map_err(|e| PolicyError::Bundle(e.to_string()))?;
        let meta: BundleMeta = serde_json::from_str(&text).map_err(|e| PolicyError::Bundle(e.to_string()))?;
        if meta.version != POLICY_BUNDLE_VERSION {
            return Err(PolicyError::Bundle(format!(
                "bundle version {} (expected {POLICY_BUNDLE_VERSION})",
                meta.version
            )));
        }
        let params = ParamStore::load(dir.join("params.bin"))?;
        let mut policy = Self::new(meta.hyper, meta.scales, 0)?.with_name(&meta.name);
        for (name, t) in policy.params.iter() {
            let loaded = params.get(name).ok_or_else(|| PolicyError::Bundle(format!("missing parameter {name}")))?;
            if loaded.shape() != t.shape() {
                return Err(PolicyError::Bundle(format!("parameter {name} has shape {:?}", loaded.shape())));
            }
        }
        policy.params = params;
        Ok(policy)
    }
}

impl Policy for NeuralPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn window(&self) -> usize {
        self.hyper.window
    }

    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    fn act(&self, tape: &mut Tape<'_, f64>, obs: &Observation) -> Result<NodeId, PolicyError> {
        if obs.window.len() != self.hyper.window {
            return Err(PolicyError::Dimension {
                got: obs.window.len(),
                expected: self.hyper.window,
            });
        }
        let scale = column_for(tape, &obs.products, &self.scales)?;
        let inv_scale: Vec<f64> = obs.products.iter().map(|&i| 1.0 / self.scales[i]).collect();
        let inv_scale = tape.constant(Tensor::column(inv_scale));

        let mut parts = Vec::new();
        if self.hyper.window > 0 {
            let mut steps: Vec<NodeId> = obs
                .window
                .iter()
                .map(|p| {
                    let d = tape.mul(p.demand, inv_scale);
                    let a = tape.mul(p.action, inv_scale);
                    let r = tape.mul(p.received, inv_scale);
                    tape.concat(vec![d, a, r, p.holiday], Axis::Cols)
                })
                .collect();
            for (k, &d) in self.hyper.dilations.iter().enumerate() {
                steps = causal_conv(tape, &steps, &format!("enc.{k}"), d);
            }
            parts.push(*steps.last().expect("window > 0"));
        }
        let inv = tape.mul(obs.inventory, inv_scale);
        let out = tape.mul(obs.outstanding, inv_scale);
        let hd = tape.scale(obs.holiday_distance, 1.0 / HOLIDAY_DISTANCE_CAP as f64);
        let price = tape.values_of(obs.price)?;
        let cost = tape.values_of(obs.cost)?;
        let margin: Vec<f64> = price
            .iter()
            .zip(&cost)
            .map(|(p, c)| if *p > 0.0 { c / p } else { 1.0 })
            .collect();
        let margin = tape.constant(Tensor::column(margin));
        parts.extend([inv, out, hd, margin]);
        let x = tape.concat(parts, Axis::Cols);
        let h = mlp(tape, x, "mlp", self.hyper.hidden.len(), true);
        let z = tape.dense(h, "head");
        let a = tape.softplus(z);
        Ok(tape.mul(a, scale))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbpConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub horizon: Option<usize>,
    pub reward: RewardConfig,
    /// Distinct noise seeds cycled across epochs; 1 trains on frozen noise.
    pub noise_seeds: usize,
    pub seed: u64,
}

impl DbpConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            learning_rate: 3e-3,
            clip_norm: Some(10.0),
            horizon: None,
            reward: RewardConfig::default(),
            noise_seeds: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbpRecord {
    pub epoch: usize,
    /// Mean per-product discounted reward over the epoch's batches.
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbpReport {
    pub records: Vec<DbpRecord>,
    /// Objective on the first epoch's noise, before and after training.
    pub start_objective: f64,
    pub end_objective: f64,
}

fn full_objective(
    policy: &NeuralPolicy,
    world: &World,
    dynamics: Dynamics<'_>,
    post: &dyn PostProcessor,
    cfg: &DbpConfig,
    noise: u64,
) -> Result<f64, PolicyError> {
    let mut spec = RolloutSpec::new(world, policy, dynamics)
        .postprocessor(post)
        .reward(cfg.reward)
        .seed(noise);
    if let Some(h) = cfg.horizon {
        spec = spec.horizon(h);
    }
    Ok(rollout_batch(&spec).map_err(|e| PolicyError::Training(e.to_string()))?.objective)
}

/// Gradient ascent on the simulated discounted reward, with mini-batches
/// of products and all randomness derived from `cfg.seed`.
pub fn train_direct_backprop(
    policy: &mut NeuralPolicy,
    world: &World,
    dynamics: Dynamics<'_>,
    post: &dyn PostProcessor,
    cfg: &DbpConfig,
) -> Result<DbpReport, PolicyError> {
    if cfg.batch_size == 0 || cfg.noise_seeds == 0 {
        return Err(PolicyError::Invalid("batch size and noise seeds must be positive".into()));
    }
    if policy.scales.len() < world.num_products() {
        return Err(PolicyError::UnknownProduct(policy.scales.len()));
    }
    let noise = |epoch: usize| seed::derive(cfg.seed, &[0x501, (epoch % cfg.noise_seeds) as u64]);
    let start_objective = full_objective(policy, world, dynamics, post, cfg, noise(0))?;
    let mut opt = Optimizer::adam(cfg.learning_rate);
    if let Some(c) = cfg.clip_norm {
        opt = opt.with_clip_norm(c);
    }
    let mut order: Vec<usize> = (0..world.num_products()).collect();
    let mut rng = seed::rng_for(cfg.seed, &[0x5a]);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut norm = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let result = {
                let mut spec = RolloutSpec::new(world, &*policy, dynamics)
                    .products(chunk.to_vec())
                    .postprocessor(post)
                    .reward(cfg.reward)
                    .seed(noise(epoch))
                    .differentiable(true);
                if let Some(h) = cfg.horizon {
                    spec = spec.horizon(h);
                }
                rollout_batch(&spec).map_err(|e| PolicyError::Training(e.to_string()))?
            };
            let mut grads = result.gradients.expect("differentiable rollout");
            if !grads.is_finite() {
                return Err(PolicyError::Training(format!(
                    "non-finite gradient at epoch {epoch}, batch objective {}",
                    result.objective
                )));
            }
            norm = norm.max(grads.norm());
            total += result.objective * chunk.len() as f64;
            grads.scale(-1.0);
            opt.step(&mut policy.params, &grads);
        }
        let objective = total / order.len() as f64;
        log::debug!("dbp epoch {epoch}: objective {objective:.4}");
        records.push(DbpRecord {
            epoch,
            objective,
            grad_norm: norm,
        });
    }
    let end_objective = full_objective(policy, world, dynamics, post, cfg, noise(0))?;
    Ok(DbpReport {
        records,
        start_objective,
        end_objective,
    })
}
