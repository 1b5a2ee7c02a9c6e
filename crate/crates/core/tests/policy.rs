use qotsim::engine::{check_with, CheckOptions};
use qotsim::policy::{train_direct_backprop, DbpConfig, NeuralPolicy, Policy, PolicyHyper};
use qotsim::postprocess::IdentityPostProcessor;
use qotsim::sim::{rollout_batch, Dynamics, RolloutSpec};
use qotsim::world::{generate_world, World, WorldConfig};

fn world(products: usize, horizon: usize) -> World {
    generate_world(&WorldConfig::fixed_lead(products, horizon, 3, 2), 21).unwrap()
}

fn small_hyper() -> PolicyHyper {
    PolicyHyper {
        window: 4,
        conv_channels: 3,
        dilations: vec![1, 2],
        hidden: vec![6],
    }
}

fn actions(w: &World, p: &dyn Policy) -> Vec<Vec<f64>> {
    let spec = RolloutSpec::new(w, p, Dynamics::ReplayTruth).postprocessor(&IdentityPostProcessor);
    rollout_batch(&spec)
        .unwrap()
        .trajectories
        .iter()
        .map(|tr| tr.records.iter().map(|r| r.action).collect())
        .collect()
}

#[test]
fn zero_head_orders_a_constant_multiple_of_scale() {
    let w = world(3, 10);
    let mut p = NeuralPolicy::for_world(&w, small_hyper(), 1).unwrap();
    for name in ["head.w", "head.b"] {
        p.params_mut().get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let acts = actions(&w, &p);
    for (i, row) in acts.iter().enumerate() {
        let want = std::f64::consts::LN_2 * p.scales()[i];
        assert!(row.iter().all(|a| (a - want).abs() < 1e-12));
    }
}

#[test]
fn initialization_is_seed_deterministic() {
    let w = world(2, 8);
    let a = NeuralPolicy::for_world(&w, small_hyper(), 5).unwrap();
    let b = NeuralPolicy::for_world(&w, small_hyper(), 5).unwrap();
    assert_eq!(actions(&w, &a), actions(&w, &b));
}

#[test]
fn actions_do_not_depend_on_future_demand() {
    let w = world(2, 12);
    let p = NeuralPolicy::for_world(&w, small_hyper(), 2).unwrap();
    let cut = 6;
    let states: Vec<Vec<_>> = (0..w.num_products())
        .map(|i| {
            let mut s = w.states(i).to_vec();
            for st in &mut s[cut..] {
                st.demand += 7.0;
            }
            s
        })
        .collect();
    let shifted = World::new(w.max_lead(), w.products().to_vec(), states, w.holidays().to_vec(), None).unwrap();
    let a = actions(&w, &p);
    let b = actions(&shifted, &p);
    for i in 0..a.len() {
        assert_eq!(a[i][..=cut], b[i][..=cut]);
        assert_ne!(a[i][cut + 1..], b[i][cut + 1..]);
    }
}

#[test]
fn rejects_inconsistent_hyperparameters() {
    let w = world(1, 5);
    let no_conv = PolicyHyper {
        dilations: vec![],
        ..small_hyper()
    };
    assert!(NeuralPolicy::for_world(&w, no_conv, 2).is_err());
    let zero_dilation = PolicyHyper {
        dilations: vec![0],
        ..small_hyper()
    };
    assert!(NeuralPolicy::for_world(&w, zero_dilation, 2).is_err());
    assert!(NeuralPolicy::for_world(&w, PolicyHyper::stateless(vec![4]), 2).is_ok());
}

#[test]
fn rollout_gradient_matches_central_differences() {
    let w = world(3, 8);
    let mut p = NeuralPolicy::for_world(&w, small_hyper(), 3).unwrap();
    // zero biases on zero-padded steps sit exactly on the relu kink
    for (k, (name, t)) in p.params_mut().iter_mut().enumerate() {
        if name.ends_with(".b") {
            t.data_mut().iter_mut().enumerate().for_each(|(j, x)| *x = 0.05 + 0.01 * ((k + j) % 5) as f64);
        }
    }
    let p = p;
    let objective = |params: &qotsim::ParamStore| {
        let spec = RolloutSpec::new(&w, &p, Dynamics::ReplayTruth)
            .postprocessor(&IdentityPostProcessor)
            .params(params)
            .differentiable(true);
        rollout_batch(&spec).unwrap()
    };
    let g = objective(p.params()).gradients.unwrap();
    let opts = CheckOptions {
        epsilon: 1e-6,
        max_coords: 8,
        ..CheckOptions::default()
    };
    let rep = check_with(p.params(), &g, opts, |q| Ok(objective(q).objective)).unwrap();
    assert!(rep.max_rel_error() < 1e-4, "{rep:?}");
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let w = world(4, 8);
    let mut p = NeuralPolicy::for_world(&w, small_hyper(), 4).unwrap();
    let before = p.params().clone();
    let cfg = DbpConfig {
        epochs: 3,
        learning_rate: 0.0,
        ..DbpConfig::desk()
    };
    train_direct_backprop(&mut p, &w, Dynamics::ReplayTruth, &IdentityPostProcessor, &cfg).unwrap();
    for (name, t) in before.iter() {
        assert_eq!(t.data(), p.params().get(name).unwrap().data(), "{name}");
    }
}

#[test]
fn training_improves_the_objective() {
    let w = world(16, 20);
    let mut p = NeuralPolicy::for_world(&w, small_hyper(), 6).unwrap();
    let cfg = DbpConfig {
        epochs: 40,
        learning_rate: 1e-2,
        ..DbpConfig::desk()
    };
    let rep = train_direct_backprop(&mut p, &w, Dynamics::ReplayTruth, &IdentityPostProcessor, &cfg).unwrap();
    assert!(rep.end_objective > rep.start_objective, "{} -> {}", rep.start_objective, rep.end_objective);
    assert_eq!(rep.records.len(), 40);
}

#[test]
fn bundle_round_trip() {
    let w = world(2, 6);
    let p = NeuralPolicy::for_world(&w, small_hyper(), 7).unwrap().with_name("mine");
    let dir = tempfile::tempdir().unwrap();
    p.save(dir.path()).unwrap();
    let q = NeuralPolicy::load(dir.path()).unwrap();
    assert_eq!(q.name(), "mine");
    assert_eq!(actions(&w, &p), actions(&w, &q));
}
