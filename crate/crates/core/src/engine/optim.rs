use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::graph::Gradients;
use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer minimizing the objective whose gradient is given.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: Option<f64>,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    /// Rescales gradients whose global L2 norm exceeds `max_norm`.
    pub fn with_clip_norm(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One descent step on `params`. Parameters are visited in name order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let clip = match self.clip_norm {
            Some(max) => {
                let norm = grads
                    .params
                    .values()
                    .flat_map(|g| g.data().iter())
                    .map(|x| x.as_f64() * x.as_f64())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.step as i32;
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.params.get(name) else { continue };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= T::of(self.lr * clip * d.as_f64());
                    }
                }
                OptimizerKind::Adam => {
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(p.shape()));
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(p.shape()));
                    let bc1 = 1.0 - self.beta1.powi(t);
                    let bc2 = 1.0 - self.beta2.powi(t);
                    for k in 0..p.numel() {
                        let d = g.data()[k].as_f64() * clip;
                        let mk = self.beta1 * m.data()[k].as_f64() + (1.0 - self.beta1) * d;
                        let vk = self.beta2 * v.data()[k].as_f64() + (1.0 - self.beta2) * d * d;
                        m.data_mut()[k] = T::of(mk);
                        v.data_mut()[k] = T::of(vk);
                        let update = self.lr * (mk / bc1) / ((vk / bc2).sqrt() + self.eps);
                        p.data_mut()[k] -= T::of(update);
                    }
                }
            }
        }
    }
}
