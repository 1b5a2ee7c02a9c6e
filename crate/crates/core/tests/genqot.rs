use qotsim::dataset::OrderHistory;
use qotsim::engine::{check_with, CheckOptions};
use qotsim::genqot::{FeatureSpec, Features, GenQotHyper, GenQotModel, TrainExample};
use qotsim::grid::{ArrivalClassGrid, RepresentativeMode};
use qotsim::policy::OpenLoopPolicy;
use qotsim::postprocess::RoundingPostProcessor;
use qotsim::world::{generate_world, World, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn worked_grid() -> ArrivalClassGrid {
    ArrivalClassGrid::build(vec![0, 1, 2, 3], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], RepresentativeMode::BinCenter).unwrap()
}

fn tiny_hyper() -> GenQotHyper {
    let mut h = GenQotHyper::desk();
    h.conv_channels = 3;
    h.recurrent_width = 6;
    h.mlp_width = 5;
    h
}

struct Setup {
    world: World,
    history: OrderHistory,
}

fn setup(products: usize) -> Setup {
    let mut cfg = WorldConfig::discrete_small();
    cfg.products = products;
    let world = generate_world(&cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let acts = (0..products)
        .map(|_| (0..world.horizon()).map(|_| rng.random_range(0..3) as f64).collect())
        .collect();
    let history = OrderHistory::simulate(&world, &OpenLoopPolicy::new(acts), &RoundingPostProcessor, 2).unwrap();
    Setup { world, history }
}

fn model(s: &Setup, hyper: GenQotHyper, seed: u64) -> GenQotModel {
    GenQotModel::new(hyper, worked_grid(), FeatureSpec::for_world(&s.world, None), seed).unwrap()
}

fn examples(s: &Setup, m: &GenQotModel, n: usize) -> Vec<TrainExample> {
    let orders: Vec<_> = s.history.orders_in(0..s.history.horizon()).into_iter().take(n).collect();
    s.history.examples(&s.world, m, &orders).unwrap().0
}

fn some_features(s: &Setup, m: &GenQotModel) -> Features {
    let (i, t) = s.history.orders_in(4..10)[0];
    let slice = s.history.context(&s.world, i, t, m.spec().window).unwrap();
    m.spec().featurize(&slice, s.history.actions[i][t]).unwrap()
}

#[test]
fn initialization_is_seed_deterministic() {
    let s = setup(4);
    let a = model(&s, tiny_hyper(), 7);
    let b = model(&s, tiny_hyper(), 7);
    let c = model(&s, tiny_hyper(), 8);
    assert_eq!(a.vocab(), 16);
    for (name, t) in a.params().iter() {
        let u = b.params().get(name).unwrap();
        assert!(t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
    }
    assert!(a.params().iter().any(|(n, t)| t.data() != c.params().get(n).unwrap().data()));
}

#[test]
fn zero_output_head_is_uniform() {
    let s = setup(4);
    let mut m = model(&s, tiny_hyper(), 1);
    for name in ["out.w", "out.b"] {
        m.params_mut().get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let f = some_features(&s, &m);
    for prefix in [vec![], vec![3], vec![3, 7]] {
        let p = m.next_distribution_features(&f, &prefix).unwrap();
        assert_eq!(p.len(), 16);
        assert!(p.iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-12));
    }
}

#[test]
fn next_class_distribution_is_normalized() {
    let s = setup(4);
    let m = model(&s, tiny_hyper(), 2);
    let f = some_features(&s, &m);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let len = rng.random_range(0..=m.max_len());
        let prefix: Vec<usize> = (0..len).map(|_| rng.random_range(1..16)).collect();
        let p = m.next_distribution_features(&f, &prefix).unwrap();
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(m.next_distribution_features(&f, &vec![1; m.max_len() + 1]).is_err());
}

#[test]
fn sequence_log_prob_is_sum_of_next_token_logs() {
    let s = setup(4);
    let m = model(&s, tiny_hyper(), 3);
    let f = some_features(&s, &m);
    let tokens = [5, 9, 0];
    let lp = m.sequence_log_prob(&f, &tokens).unwrap();
    let mut want = 0.0;
    for k in 0..tokens.len() {
        want += m.next_distribution_features(&f, &tokens[..k]).unwrap()[tokens[k]].ln();
    }
    assert!((lp - want).abs() < 1e-10, "{lp} vs {want}");
}

#[test]
fn batch_loss_matches_mean_token_nll() {
    let s = setup(6);
    let m = model(&s, tiny_hyper(), 4);
    let ex = examples(&s, &m, 5);
    let refs: Vec<&TrainExample> = ex.iter().collect();
    let (loss, _) = m.batch_loss(m.params(), &refs, false).unwrap();
    let mut nll = 0.0;
    let mut n = 0;
    for e in &ex {
        let f = m.norm().apply(&e.features);
        nll -= m.sequence_log_prob(&f, &e.tokens).unwrap();
        n += e.tokens.len();
    }
    assert!((loss - nll / n as f64).abs() < 1e-10);
}

#[test]
fn loss_gradient_matches_central_differences() {
    let s = setup(6);
    let m = model(&s, tiny_hyper(), 5);
    let ex = examples(&s, &m, 6);
    let refs: Vec<&TrainExample> = ex.iter().collect();
    let (_, g) = m.batch_loss(m.params(), &refs, true).unwrap();
    let opts = CheckOptions {
        max_coords: 12,
        ..CheckOptions::default()
    };
    let rep = check_with(m.params(), &g.unwrap(), opts, |p| Ok(m.batch_loss(p, &refs, false).unwrap().0)).unwrap();
    assert!(rep.max_rel_error() < 1e-4, "{rep:?}");
}

#[test]
fn memorizes_a_few_examples() {
    let s = setup(6);
    let mut h = tiny_hyper();
    h.epochs = 300;
    h.batch_size = 4;
    h.learning_rate = 1e-2;
    let mut m = model(&s, h, 6);
    let ex = examples(&s, &m, 4);
    let rec = m.train(&ex, None, 1).unwrap();
    let end = m.mean_loss(&ex).unwrap();
    assert!(end < 0.05 * rec.initial_loss, "{} -> {end}", rec.initial_loss);
}

#[test]
fn zero_order_yields_no_arrivals() {
    let s = setup(4);
    let m = model(&s, tiny_hyper(), 9);
    let slice = s.history.context(&s.world, 0, 5, m.spec().window).unwrap();
    for smp in m.sample_arrivals(&slice, 0.0, 20, 1).unwrap() {
        assert!(smp.classes.is_empty());
        assert!(!smp.forced_stop);
        assert_eq!(smp.decoded.sequence.total(), 0.0);
    }
}

#[test]
fn first_token_frequencies_match_the_model() {
    let s = setup(4);
    let m = model(&s, tiny_hyper(), 10);
    let slice = s.history.context(&s.world, 0, 6, m.spec().window).unwrap();
    let p = m.next_class_distribution(&slice, 2.0, &[]).unwrap();
    let n = 20_000;
    let mut counts = vec![0usize; p.len()];
    for smp in m.sample_arrivals(&slice, 2.0, n, 3).unwrap() {
        let first = smp.classes.first().map(|&c| m.grid().token_of(c).unwrap()).unwrap_or(0);
        counts[first] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        let sd = (p[k] * (1.0 - p[k]) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p[k]).abs() < 5.0 * sd + 1e-9, "token {k}");
    }
}

#[test]
fn sampling_is_reproducible_from_the_seed() {
    let s = setup(4);
    let m = model(&s, tiny_hyper(), 11);
    let slice = s.history.context(&s.world, 1, 6, m.spec().window).unwrap();
    let a = m.sample_arrivals(&slice, 2.0, 50, 9).unwrap();
    let b = m.sample_arrivals(&slice, 2.0, 50, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bundle_round_trip_preserves_predictions() {
    let s = setup(6);
    let mut h = tiny_hyper();
    h.epochs = 3;
    let mut m = model(&s, h, 12);
    let ex = examples(&s, &m, 20);
    m.train(&ex, None, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), "abc123", 12).unwrap();
    let back = GenQotModel::load(dir.path()).unwrap();
    assert_eq!(GenQotModel::dataset_hash(dir.path()).unwrap(), "abc123");
    let f = some_features(&s, &m);
    let p = m.next_distribution_features(&f, &[4]).unwrap();
    let q = back.next_distribution_features(&f, &[4]).unwrap();
    assert!(p.iter().zip(&q).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn rejects_sequences_without_sentinel() {
    let s = setup(4);
    let m = model(&s, tiny_hyper(), 13);
    let mut ex = examples(&s, &m, 1);
    ex[0].tokens.pop();
    ex[0].tokens.push(3);
    assert!(m.batch_loss(m.params(), &[&ex[0]], false).is_err());
}
