use std::fs;
use std::path::{Path, PathBuf};

use qotsim::dataset::{default_grid, OrderHistory};
use qotsim::evaluation::{evaluate_forecasts, forecast_orders, forecast_orders_vlt};
use qotsim::genqot::{FeatureSpec, GenQotHyper, GenQotModel};
use qotsim::policy::{
    fit_base_stock, train_direct_backprop, BaseStockPolicy, DbpConfig, NeuralPolicy, NoisyBaseStock, OpenLoopPolicy,
    Policy, PolicyHyper,
};
use qotsim::postprocess::RoundingPostProcessor;
use qotsim::seed::{derive, rng_for};
use qotsim::sim::{evaluate_policy, Dynamics, RolloutSpec, VltModel};
use qotsim::world::{export_world, generate_world, import_world, World, WorldConfig};
use rand::seq::SliceRandom;
use clap::ValueEnum;
use rand::Rng;

use crate::error::{require, CliError};
use crate::manifest::{self, ManifestBuilder};
use crate::report::{generate_report, parse_metrics, BacktestIndex, ARRIVAL_EVAL_FILE, BACKTEST_FILE};
use crate::{BacktestArgs, Behavior, EvalQotArgs, GenDataArgs, ModeArg, Preset, ReportArgs, TrainPolicyArgs, TrainQotArgs};

const WORLD_DIR: &str = "world";
const CONFIG_FILE: &str = "config.json";
const TRAINING_FILE: &str = "training.json";

/// Default training cutoff: the first three quarters of the horizon.
pub fn default_split(horizon: usize) -> usize {
    (horizon * 3 / 4).max(1)
}

struct Data {
    world: World,
    history: OrderHistory,
    history_hash: String,
}

fn load_data(dir: &Path) -> Result<Data, CliError> {
    require(&[dir, &dir.join(WORLD_DIR), &dir.join(qotsim::dataset::HISTORY_FILE)])?;
    let world = import_world(dir.join(WORLD_DIR))?;
    let (history, history_hash) = OrderHistory::load(dir)?;
    history.check_world(&world)?;
    Ok(Data {
        world,
        history,
        history_hash,
    })
}

fn check_split(split: usize, horizon: usize) -> Result<usize, CliError> {
    if split == 0 || split >= horizon {
        return Err(CliError::usage(format!("split period {split} must lie in 1..{horizon}")));
    }
    Ok(split)
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn gen_data(a: &GenDataArgs, argv: &[String]) -> Result<(), CliError> {
    require(&[&a.config])?;
    let text = fs::read_to_string(&a.config)?;
    let config = WorldConfig::from_json(&text)?;
    let world = generate_world(&config, a.seed)?;
    create_out(&a.out)?;
    export_world(&world, a.out.join(WORLD_DIR))?;
    fs::write(a.out.join(CONFIG_FILE), config.to_json())?;

    let split = default_split(world.horizon());
    let past = world.window(0, split)?;
    let behavior: Box<dyn Policy> = match a.behavior {
        Behavior::NoisyBaseStock => {
            let targets = fit_base_stock(&past, Some(0.8), 1 + world.max_lead() / 2)?;
            let scales = (0..world.num_products()).map(|i| past.mean_demand(i, split).max(1e-3)).collect();
            Box::new(NoisyBaseStock::new(targets, scales, 0.3, 0.1, derive(a.seed, &[1])))
        }
        Behavior::Random => {
            let mut rng = rng_for(a.seed, &[1]);
            let actions = (0..world.num_products())
                .map(|i| {
                    (0..world.horizon())
                        .map(|t| {
                            let cap = world
                                .state(i, t)
                                .constraints
                                .max_order_qty
                                .unwrap_or_else(|| (2.0 * past.mean_demand(i, split)).ceil());
                            rng.random_range(0..=cap.max(0.0) as u64) as f64
                        })
                        .collect()
                })
                .collect();
            Box::new(OpenLoopPolicy::new(actions))
        }
    };
    let history = OrderHistory::simulate(&world, &*behavior, &RoundingPostProcessor, derive(a.seed, &[2]))?;
    let hash = history.save(&a.out)?;
    ManifestBuilder::new("gen-data", argv, a.seed)
        .config_bytes(text.as_bytes())
        .input("config", &a.config)?
        .extra("history_sha256", hash)
        .extra("default_split", split)
        .write(&a.out)?;
    Ok(())
}

fn genqot_hyper(preset: Preset, epochs: Option<usize>) -> GenQotHyper {
    let mut h = match preset {
        Preset::Desk => GenQotHyper::desk(),
        Preset::Paper => GenQotHyper::paper(),
    };
    if let Some(e) = epochs {
        h.epochs = e;
    }
    h
}

pub fn train_qot(a: &TrainQotArgs, argv: &[String]) -> Result<(), CliError> {
    let d = load_data(&a.world)?;
    let split = check_split(a.train_until.unwrap_or(default_split(d.world.horizon())), d.world.horizon())?;
    let spec = FeatureSpec::for_world(&d.world, None);
    let mut model = GenQotModel::new(genqot_hyper(a.preset, a.epochs), default_grid(d.world.max_lead())?, spec, a.seed)?;
    let orders = d.history.orders_in(0..split);
    let (mut examples, seqs) = d.history.examples(&d.world, &model, &orders)?;
    model.fit_representatives(&seqs);
    examples.shuffle(&mut rng_for(a.seed, &[3]));
    let n_valid = (examples.len() / 5).max(1).min(examples.len().saturating_sub(1));
    let (valid, train) = examples.split_at(n_valid);
    let record = model.train(train, (!valid.is_empty()).then_some(valid), a.seed)?;
    log::info!("trained in {:.1} s", record.wall_clock_secs);
    create_out(&a.out)?;
    model.save(&a.out, &d.history_hash, a.seed)?;
    let mut rec = serde_json::to_value(&record)?;
    if let Some(o) = rec.as_object_mut() {
        o.remove("wall_clock_secs");
    }
    write_json(a.out.join(TRAINING_FILE), &rec)?;
    ManifestBuilder::new("train-qot", argv, a.seed)
        .input("world", &a.world)?
        .extra("train_until", split)
        .extra("train_examples", train.len())
        .extra("valid_examples", valid.len())
        .write(&a.out)?;
    Ok(())
}

fn training_cutoff(model_dir: &Path, horizon: usize) -> usize {
    manifest::read(model_dir)
        .and_then(|m| m.extra.get("train_until").and_then(|v| v.as_u64()))
        .map(|v| v as usize)
        .unwrap_or(default_split(horizon))
}

fn vlt_from_history(d: &Data, until: usize) -> Result<VltModel, CliError> {
    let orders: Vec<_> = d
        .history
        .orders_in(0..until)
        .into_iter()
        .map(|(i, t)| (i, d.history.order(i, t)))
        .collect();
    Ok(VltModel::fit(&orders, d.world.num_products(), d.world.max_lead())?)
}

pub fn eval_qot(a: &EvalQotArgs, argv: &[String]) -> Result<(), CliError> {
    let metrics = parse_metrics(&a.metrics)?;
    if a.samples == 0 {
        return Err(CliError::usage("--samples must be positive"));
    }
    require(&[&a.model])?;
    let d = load_data(&a.world)?;
    let model = GenQotModel::load(&a.model)?;
    let horizon = d.world.horizon();
    let test_from = check_split(a.test_from.unwrap_or(training_cutoff(&a.model, horizon)), horizon)?;
    let test = d.history.orders_in(test_from..horizon);
    if test.is_empty() {
        return Err(CliError::failed(format!("no orders at or after period {test_from}")));
    }
    let weeks = d.world.max_lead() + 1;
    let bins = 10;
    let f = forecast_orders(&model, &d.world, &d.history, &test, a.samples, weeks, a.seed)?;
    let vlt = vlt_from_history(&d, test_from)?;
    let fv = forecast_orders_vlt(&vlt, &d.history, &test, weeks);
    let evals = vec![evaluate_forecasts("genqot", &f, weeks, bins)?, evaluate_forecasts("vlt", &fv, weeks, bins)?];
    create_out(&a.out)?;
    write_json(a.out.join(ARRIVAL_EVAL_FILE), &evals)?;
    generate_report(&a.out, &a.out, None, &metrics, a.seed, 2000)?;
    ManifestBuilder::new("eval-qot", argv, a.seed)
        .input("model", &a.model)?
        .input("world", &a.world)?
        .extra("test_from", test_from)
        .extra("test_orders", test.len())
        .write(&a.out)?;
    Ok(())
}

fn default_policy_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Genqot => "qot_dbp",
        ModeArg::VltModel => "vlt_dbp",
        ModeArg::ReplayTruth => "truth_dbp",
    }
}

fn load_sampler(mode: ModeArg, model: &Option<PathBuf>) -> Result<Option<GenQotModel>, CliError> {
    match (mode, model) {
        (ModeArg::Genqot, Some(p)) => {
            require(&[p])?;
            Ok(Some(GenQotModel::load(p)?))
        }
        (ModeArg::Genqot, None) => Err(CliError::usage("--mode genqot needs --model")),
        _ => Ok(None),
    }
}

fn dynamics<'a>(mode: ModeArg, sampler: &'a Option<GenQotModel>, vlt: &'a VltModel) -> Dynamics<'a> {
    match mode {
        ModeArg::ReplayTruth => Dynamics::ReplayTruth,
        ModeArg::VltModel => Dynamics::Vlt(vlt),
        ModeArg::Genqot => Dynamics::Genqot(sampler.as_ref().expect("checked by load_sampler")),
    }
}

pub fn train_policy(a: &TrainPolicyArgs, argv: &[String]) -> Result<(), CliError> {
    let sampler = load_sampler(a.mode, &a.model)?;
    let d = load_data(&a.world)?;
    let split = check_split(a.train_until.unwrap_or(default_split(d.world.horizon())), d.world.horizon())?;
    let train = d.world.window(0, split)?;
    let vlt = vlt_from_history(&d, split)?;
    let hyper = match a.preset {
        Preset::Desk => PolicyHyper::desk(),
        Preset::Paper => PolicyHyper::paper(),
    };
    let name = a.name.clone().unwrap_or_else(|| default_policy_name(a.mode).to_string());
    let mut policy = NeuralPolicy::for_world(&train, hyper, a.seed)?.with_name(&name);
    let mut cfg = DbpConfig::desk();
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let report = train_direct_backprop(&mut policy, &train, dynamics(a.mode, &sampler, &vlt), &RoundingPostProcessor, &cfg)?;
    create_out(&a.out)?;
    policy.save(&a.out)?;
    write_json(a.out.join(TRAINING_FILE), &report)?;
    let mut m = ManifestBuilder::new("train-policy", argv, a.seed)
        .input("world", &a.world)?
        .extra("train_until", split)
        .extra("dbp", &cfg);
    if let Some(p) = &a.model {
        m = m.input("model", p)?;
    }
    m.write(&a.out)?;
    Ok(())
}

pub fn backtest(a: &BacktestArgs, argv: &[String]) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    let names: Vec<String> = a.policies.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if names.is_empty() {
        return Err(CliError::usage("--policies is empty"));
    }
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != names.len() {
        return Err(CliError::usage("--policies lists a name twice"));
    }
    let baseline = a.baseline.clone().unwrap_or_else(|| names[0].clone());
    if !names.contains(&baseline) {
        return Err(CliError::usage(format!("baseline `{baseline}` is not among the policies")));
    }
    let dirs: Vec<PathBuf> = names
        .iter()
        .filter(|n| n.as_str() != "newsvendor")
        .map(|n| a.policy_dir.join(n))
        .collect();
    require(&dirs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let sampler = load_sampler(a.mode, &a.model)?;
    let d = load_data(&a.world)?;
    let horizon = d.world.horizon();
    let test_from = check_split(a.test_from.unwrap_or(default_split(horizon)), horizon)?;
    let train = d.world.window(0, test_from)?;
    let test = d.world.window(test_from, horizon)?;
    let vlt = vlt_from_history(&d, test_from)?;

    let mut policies: Vec<Box<dyn Policy>> = Vec::new();
    for n in &names {
        if n == "newsvendor" {
            let window = 1 + vlt.pooled_mean_lead().ceil() as usize;
            policies.push(Box::new(BaseStockPolicy::new(fit_base_stock(&train, None, window)?)?.with_name("newsvendor")));
        } else {
            policies.push(Box::new(NeuralPolicy::load(a.policy_dir.join(n))?.with_name(n)));
        }
    }
    create_out(&a.out)?;
    fs::create_dir_all(a.out.join("summaries"))?;
    fs::create_dir_all(a.out.join("trajectories"))?;
    for p in &policies {
        let spec = RolloutSpec::new(&test, &**p, dynamics(a.mode, &sampler, &vlt))
            .postprocessor(&RoundingPostProcessor)
            .seed(a.seed);
        let summary = evaluate_policy(&spec, a.seeds)?;
        write_json(a.out.join("summaries").join(format!("{}.json", p.name())), &summary)?;
        let mut jsonl = Vec::new();
        for tr in &summary.trajectories {
            tr.write_jsonl(&mut jsonl)?;
        }
        fs::write(a.out.join("trajectories").join(format!("{}.jsonl", p.name())), jsonl)?;
    }
    let index = BacktestIndex {
        policies: names.clone(),
        baseline: baseline.clone(),
        mode: a.mode.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default(),
        seeds: a.seeds,
        test_from,
    };
    write_json(a.out.join(BACKTEST_FILE), &index)?;
    generate_report(&a.out, &a.out, Some(&baseline), &parse_metrics("crps,ql,calibration")?, a.seed, a.resamples)?;
    let mut m = ManifestBuilder::new("backtest", argv, a.seed).input("world", &a.world)?;
    for (n, dir) in names.iter().filter(|n| n.as_str() != "newsvendor").zip(&dirs) {
        m = m.input(&format!("policy:{n}"), dir)?;
    }
    if let Some(p) = &a.model {
        m = m.input("model", p)?;
    }
    m.extra("test_from", test_from).write(&a.out)?;
    Ok(())
}

pub fn report(a: &ReportArgs, argv: &[String]) -> Result<(), CliError> {
    let metrics = parse_metrics(&a.metrics)?;
    require(&[&a.run])?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    create_out(&out)?;
    generate_report(&a.run, &out, a.baseline.as_deref(), &metrics, a.seed, a.resamples)?;
    if out != a.run {
        ManifestBuilder::new("report", argv, a.seed).input("run", &a.run)?.write(&out)?;
    }
    Ok(())
}
