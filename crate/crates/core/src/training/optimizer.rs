//! Adaptive-moment optimizer with bias correction. One instance per network
//! side (generator, discriminators); moment state is keyed by parameter key
//! and serialized with the checkpoint.

use crate::autodiff::Gradients;
use crate::nn::Param;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    /// Update count, for bias correction.
    pub t: u64,
    m: HashMap<u64, Array2<f64>>,
    v: HashMap<u64, Array2<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update over `params` from `grads`. Parameters without a gradient
    /// entry are left untouched and their moments are not advanced.
    pub fn apply(&mut self, params: &mut [&mut Param], grads: &Gradients) {
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let corr1 = 1.0 - b1.powi(self.t as i32);
        let corr2 = 1.0 - b2.powi(self.t as i32);
        for p in params.iter_mut() {
            let Some(g) = grads.get(p.key) else { continue };
            let m = self
                .m
                .entry(p.key)
                .or_insert_with(|| Array2::zeros(p.value.dim()));
            let v = self
                .v
                .entry(p.key)
                .or_insert_with(|| Array2::zeros(p.value.dim()));
            azip(m, g, |m, g| *m = b1 * *m + (1.0 - b1) * g);
            azip(v, g, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
            let lr = self.cfg.lr;
            let eps = self.cfg.eps;
            for ((slot, m), v) in p.value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / corr1;
                let v_hat = v / corr2;
                *slot -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Moment tensors for checkpointing, named `<prefix>.<kind>.<param name>`.
    pub fn state_tensors<'a>(
        &'a self,
        prefix: &str,
        params: &[&Param],
    ) -> Vec<(String, &'a Array2<f64>)> {
        let mut out = Vec::new();
        for p in params {
            if let Some(m) = self.m.get(&p.key) {
                out.push((format!("{prefix}.m.{}", p.name), m));
            }
            if let Some(v) = self.v.get(&p.key) {
                out.push((format!("{prefix}.v.{}", p.name), v));
            }
        }
        out
    }

    /// Restore moments saved by `state_tensors`.
    pub fn restore(&mut self, key: u64, m: Array2<f64>, v: Array2<f64>) {
        self.m.insert(key, m);
        self.v.insert(key, v);
    }
}

fn azip(dst: &mut Array2<f64>, src: &Array2<f64>, f: impl Fn(&mut f64, f64)) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        f(d, *s);
    }
}
