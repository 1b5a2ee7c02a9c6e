//! Network building blocks expressed with engine primitives.

use rand::Rng;

use crate::scalar::Scalar;

use super::graph::{Axis, Builder, NodeId};
use super::params::ParamStore;

pub fn init_gru<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    width: usize,
    rng: &mut impl Rng,
) {
    store.init_dense(&format!("{prefix}.x"), input, 3 * width, rng);
    store.init_glorot(&format!("{prefix}.h.w"), width, 3 * width, rng);
}

/// One gated recurrent step: `h' = (1 - z) * n + z * h`.
pub fn gru_step<T: Scalar, B: Builder<T>>(
    b: &mut B,
    x: NodeId,
    h: NodeId,
    prefix: &str,
    width: usize,
) -> NodeId {
    let xw = b.dense(x, &format!("{prefix}.x"));
    let hw = b.param(&format!("{prefix}.h.w"));
    let hu = b.matmul(h, hw);
    let xz = b.slice(xw, Axis::Cols, 0, width);
    let xr = b.slice(xw, Axis::Cols, width, width);
    let xn = b.slice(xw, Axis::Cols, 2 * width, width);
    let hz = b.slice(hu, Axis::Cols, 0, width);
    let hr = b.slice(hu, Axis::Cols, width, width);
    let hn = b.slice(hu, Axis::Cols, 2 * width, width);
    let zs = b.add(xz, hz);
    let z = b.sigmoid(zs);
    let rs = b.add(xr, hr);
    let r = b.sigmoid(rs);
    let rh = b.mul(r, hn);
    let ns = b.add(xn, rh);
    let n = b.tanh(ns);
    let diff = b.sub(h, n);
    let zd = b.mul(z, diff);
    b.add(n, zd)
}

pub fn init_causal_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels_in: usize,
    channels_out: usize,
    rng: &mut impl Rng,
) {
    store.init_glorot(&format!("{prefix}.w0"), channels_in, channels_out, rng);
    store.init_glorot(&format!("{prefix}.w1"), channels_in, channels_out, rng);
    store.init_zeros(&format!("{prefix}.b"), &[1, channels_out]);
}

/// Kernel-size-2 dilated causal convolution over a sequence of `[batch,
/// channels]` steps, oldest first: `y_t = relu(x_t W0 + x_{t-d} W1 + b)`,
/// with the lagged tap omitted before the sequence start.
pub fn causal_conv<T: Scalar, B: Builder<T>>(
    b: &mut B,
    steps: &[NodeId],
    prefix: &str,
    dilation: usize,
) -> Vec<NodeId> {
    let w0 = b.param(&format!("{prefix}.w0"));
    let w1 = b.param(&format!("{prefix}.w1"));
    let bias = b.param(&format!("{prefix}.b"));
    (0..steps.len())
        .map(|t| {
            let cur = b.matmul(steps[t], w0);
            let mut pre = b.add(cur, bias);
            if t >= dilation {
                let lag = b.matmul(steps[t - dilation], w1);
                pre = b.add(pre, lag);
            }
            b.relu(pre)
        })
        .collect()
}

/// Dense layers named `{prefix}.{k}`, ReLU between layers and after the
/// last one when `relu_last`.
pub fn mlp<T: Scalar, B: Builder<T>>(
    b: &mut B,
    x: NodeId,
    prefix: &str,
    layers: usize,
    relu_last: bool,
) -> NodeId {
    let mut h = x;
    for k in 0..layers {
        h = b.dense(h, &format!("{prefix}.{k}"));
        if k + 1 < layers || relu_last {
            h = b.relu(h);
        }
    }
    h
}

pub fn init_mlp<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    sizes: &[usize],
    rng: &mut impl Rng,
) {
    for (k, pair) in sizes.windows(2).enumerate() {
        store.init_dense(&format!("{prefix}.{k}"), pair[0], pair[1], rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::check::{finite_diff_check, CheckOptions};
    use crate::engine::graph::{Bindings, Graph};
    use crate::engine::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_and_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::<f64>::new();
        init_causal_conv(&mut p, "c0", 3, 4, &mut rng);
        init_gru(&mut p, "g", 4, 5, &mut rng);
        init_mlp(&mut p, "m", &[5, 6, 2], &mut rng);
        // nonzero biases so no relu sits exactly at its kink
        for (name, t) in p.iter_mut() {
            if name.ends_with(".b") {
                for (k, x) in t.data_mut().iter_mut().enumerate() {
                    *x = 0.05 + 0.01 * k as f64;
                }
            }
        }
        let mut g = Graph::<f64>::new();
        let steps: Vec<_> = (0..4)
            .map(|t| {
                g.constant(
                    Tensor::matrix(2, 3, (0..6).map(|k| ((t * 6 + k) as f64 * 0.37).sin()).collect())
                        .unwrap(),
                )
            })
            .collect();
        let conv = causal_conv(&mut g, &steps, "c0", 2);
        let mut h = g.constant(Tensor::zeros(&[2, 5]));
        for x in conv {
            h = gru_step(&mut g, x, h, "g", 5);
        }
        let out = mlp(&mut g, h, "m", 2, false);
        let sq = g.activate(out, crate::engine::graph::Activation::Square);
        let loss = g.sum(sq);
        let rep = finite_diff_check(&g, &p, &Bindings::new(), loss, CheckOptions::default()).unwrap();
        assert!(rep.max_rel_error() < 1e-5, "{rep:?}");
    }
}
