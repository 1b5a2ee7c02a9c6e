//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::scalar::Scalar;

use super::graph::{Bindings, Graph, Gradients, NodeId};
use super::params::ParamStore;
use super::EngineError;

/// Outcome of comparing analytic gradients with central differences.
///
/// Relative error per coordinate is `|analytic - numeric| / max(|analytic|,
/// |numeric|, floor)`; a coordinate where both are exactly zero has error 0.
#[derive(Clone, Debug, Serialize)]
pub struct GradientReport {
    pub epsilon: f64,
    pub floor: f64,
    pub per_param: BTreeMap<String, f64>,
    pub coordinates_checked: usize,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.values().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub epsilon: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Coordinates checked per parameter; larger arrays are strided.
    pub max_coords: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            floor: 1e-6,
            max_coords: 64,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

fn sampled_coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let stride = n as f64 / max as f64;
    let mut v: Vec<usize> = (0..max).map(|k| (k as f64 * stride) as usize).collect();
    v.dedup();
    v
}

/// Compares analytic gradients with central differences, where `objective`
/// maps a parameter store to the scalar output.
pub fn check_with<T: Scalar>(
    params: &ParamStore<T>,
    analytic: &Gradients<T>,
    opts: CheckOptions,
    mut objective: impl FnMut(&ParamStore<T>) -> Result<f64, EngineError>,
) -> Result<GradientReport, EngineError> {
    if !(opts.epsilon > 0.0) {
        return Err(EngineError::BadStep(opts.epsilon));
    }
    let mut per_param = BTreeMap::new();
    let mut checked = 0;
    let mut probe = params.clone();
    for name in params.names() {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| EngineError::MissingParam(name.clone()))?;
        let n = grad.numel();
        let mut worst = 0.0f64;
        for k in sampled_coords(n, opts.max_coords) {
            let original = params.get(&name).expect("name from store").data()[k];
            let set = |p: &mut ParamStore<T>, v: T| {
                p.get_mut(&name).expect("name from store").data_mut()[k] = v;
            };
            set(&mut probe, T::of(original.as_f64() + opts.epsilon));
            let up = objective(&probe)?;
            set(&mut probe, T::of(original.as_f64() - opts.epsilon));
            let down = objective(&probe)?;
            set(&mut probe, original);
            let numeric = (up - down) / (2.0 * opts.epsilon);
            let a = grad.data()[k].as_f64();
            let err = relative_error(a, numeric, opts.floor);
            if err.is_nan() {
                return Err(EngineError::NanGradient(name.clone()));
            }
            worst = worst.max(err);
            checked += 1;
        }
        per_param.insert(name, worst);
    }
    Ok(GradientReport {
        epsilon: opts.epsilon,
        floor: opts.floor,
        per_param,
        coordinates_checked: checked,
    })
}

/// Finite-difference check of `output` on a static graph.
pub fn finite_diff_check<T: Scalar>(
    graph: &Graph<T>,
    params: &ParamStore<T>,
    bindings: &Bindings<T>,
    output: NodeId,
    opts: CheckOptions,
) -> Result<GradientReport, EngineError> {
    let analytic = graph.gradient(params, bindings, output)?;
    check_with(params, &analytic, opts, |p| {
        let eval = graph.evaluate(p, bindings)?;
        let v = eval.value(output);
        v.item()
            .map(Scalar::as_f64)
            .ok_or_else(|| EngineError::NotScalar(v.shape().to_vec()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::graph::{Activation, Axis, Builder};
    use crate::engine::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_check() {
        let mut g = Graph::<f64>::new();
        let th = g.param("theta");
        let y = g.mul(th, th);
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::scalar(1.0));
        let rep = finite_diff_check(&g, &p, &Bindings::new(), y, CheckOptions::default()).unwrap();
        assert!(rep.max_rel_error() < 1e-6, "{rep:?}");
    }

    #[test]
    fn constant_output_has_zero_error() {
        let mut g = Graph::<f64>::new();
        let _th = g.param("theta");
        let y = g.scalar(7.0);
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::row(vec![0.3, -0.2]));
        let rep = finite_diff_check(&g, &p, &Bindings::new(), y, CheckOptions::default()).unwrap();
        assert_eq!(rep.max_rel_error(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let mut g = Graph::<f64>::new();
        let th = g.param("theta");
        let mut p = ParamStore::new();
        p.insert("theta", Tensor::scalar(1.0));
        let opts = CheckOptions {
            epsilon: 0.0,
            ..CheckOptions::default()
        };
        assert!(matches!(
            finite_diff_check(&g, &p, &Bindings::new(), th, opts),
            Err(EngineError::BadStep(_))
        ));
    }

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    /// Every differentiable primitive, on randomized inputs in [-3, 3].
    #[test]
    fn every_primitive_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let mut p = ParamStore::new();
            p.insert("a", random_tensor(&mut rng, 3, 4));
            p.insert("b", random_tensor(&mut rng, 3, 4));
            p.insert("w", random_tensor(&mut rng, 4, 2));
            p.insert("r", random_tensor(&mut rng, 1, 4));
            p.insert("pos", random_tensor(&mut rng, 3, 4).map(|x| x.abs() + 0.5));

            let mut g = Graph::<f64>::new();
            let a = g.param("a");
            let b = g.param("b");
            let w = g.param("w");
            let r = g.param("r");
            let pos = g.param("pos");
            let mut terms = Vec::new();
            let add = g.add(a, r);
            terms.push(add);
            let sub = g.sub(a, b);
            terms.push(sub);
            let mul = g.mul(a, b);
            terms.push(mul);
            let mulb = g.mul(b, r);
            terms.push(mulb);
            let aff = g.affine(a, 0.7, -0.2);
            terms.push(aff);
            for f in [
                Activation::Identity,
                Activation::Relu,
                Activation::Sigmoid,
                Activation::Tanh,
                Activation::Softplus,
                Activation::Exp,
                Activation::Square,
            ] {
                let t = g.activate(b, f);
                terms.push(t);
            }
            let sm = g.softmax(a);
            let smw = g.mul(sm, b);
            terms.push(smw);
            let lsm = g.log_softmax(b);
            let lsmw = g.mul(lsm, a);
            terms.push(lsmw);
            let lg = g.log(pos);
            terms.push(lg);
            let mx = g.max(a, b);
            terms.push(mx);
            let mn = g.min(a, b);
            terms.push(mn);
            let cat = g.concat(vec![a, b], Axis::Rows);
            let cat_part = g.slice(cat, Axis::Rows, 2, 3);
            let catc = g.concat(vec![a, b], Axis::Cols);
            let catc_part = g.slice(catc, Axis::Cols, 3, 4);
            terms.push(cat_part);
            terms.push(catc_part);

            let mm = g.matmul(a, w);
            let mm_sum = g.sum(mm);
            let rows = g.sum_rows(a);
            let rows_sum = g.sum(rows);
            let cols = g.sum_cols(b);
            let cols_sq = g.activate(cols, Activation::Square);
            let cols_sum = g.sum(cols_sq);

            let mut total = g.add(mm_sum, rows_sum);
            total = g.add(total, cols_sum);
            for t in terms {
                // weight each term so errors cannot cancel
                let sq = g.activate(t, Activation::Tanh);
                let s = g.sum(sq);
                total = g.add(total, s);
            }
            let rep = finite_diff_check(&g, &p, &Bindings::new(), total, CheckOptions::default()).unwrap();
            assert!(rep.max_rel_error() < 1e-5, "trial {trial}: {rep:?}");
        }
    }

    #[test]
    fn evaluation_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::new();
        p.insert("a", random_tensor(&mut rng, 5, 5));
        let mut g = Graph::<f64>::new();
        let a = g.param("a");
        let m = g.matmul(a, a);
        let s = g.softmax(m);
        let out = g.sum(s);
        let first = g.evaluate(&p, &Bindings::new()).unwrap().value(out).clone();
        for _ in 0..5 {
            let again = g.evaluate(&p, &Bindings::new()).unwrap().value(out).clone();
            assert_eq!(first.data()[0].to_bits(), again.data()[0].to_bits());
        }
    }

    #[test]
    fn stop_gradient_leaves_forward_value_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParamStore::new();
        p.insert("a", random_tensor(&mut rng, 2, 3));
        let build = |detach: bool| {
            let mut g = Graph::<f64>::new();
            let a = g.param("a");
            let leaf = if detach { g.stop_gradient(a) } else { a };
            let t = g.tanh(leaf);
            let y = g.mul(t, a);
            let s = g.sum(y);
            (g, s)
        };
        let (g1, s1) = build(false);
        let (g2, s2) = build(true);
        let v1 = g1.evaluate(&p, &Bindings::new()).unwrap().value(s1).item().unwrap();
        let v2 = g2.evaluate(&p, &Bindings::new()).unwrap().value(s2).item().unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
    }
}
