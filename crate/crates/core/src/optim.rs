//! Two-group optimizer: encoder parameters at `base_lr`, attention weights at
//! `base_lr · γ` without weight decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::objective::AttentionWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adaptive moments with decoupled weight decay.
    AdamW { beta1: f64, beta2: f64, eps: f64 },
    /// Plain descent, `θ ← θ − lr·g` (decay still decoupled).
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GroupedOptimizer {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    /// Applied to the encoder group only.
    pub weight_decay: f64,
    encoder: Moments,
    attention: Moments,
    steps: u64,
}

impl GroupedOptimizer {
    pub fn new(kind: OptimizerKind, base_lr: f64, weight_decay: f64) -> Result<Self, Error> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Config {
                line: 0,
                message: format!("base_lr must be positive, got {base_lr}"),
            });
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config {
                line: 0,
                message: format!("weight_decay must be non-negative, got {weight_decay}"),
            });
        }
        Ok(GroupedOptimizer {
            kind,
            base_lr,
            weight_decay,
            encoder: Moments::default(),
            attention: Moments::default(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to both groups. Frozen attention weights are left untouched.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        weights: &mut AttentionWeights,
        w_grad: &[f64],
    ) -> Result<(), Error> {
        if params.len() != grad.len() || weights.len() != w_grad.len() {
            return Err(Error::Contract(format!(
                "gradient shapes ({}, {}) do not match parameters ({}, {})",
                grad.len(),
                w_grad.len(),
                params.len(),
                weights.len()
            )));
        }
        crate::objective::check_gamma(weights.gamma)?;
        self.steps += 1;
        let t = self.steps;
        update(
            self.kind,
            &mut self.encoder,
            t,
            self.base_lr,
            self.weight_decay,
            params,
            grad,
        );
        if !weights.frozen {
            let lr = self.base_lr * weights.gamma;
            update(self.kind, &mut self.attention, t, lr, 0.0, &mut weights.w, w_grad);
        }
        Ok(())
    }
}

fn update(kind: OptimizerKind, st: &mut Moments, t: u64, lr: f64, decay: f64, p: &mut [f64], g: &[f64]) {
    match kind {
        OptimizerKind::Sgd => {
            for (x, gi) in p.iter_mut().zip(g) {
                *x -= lr * decay * *x;
                *x -= lr * gi;
            }
        }
        OptimizerKind::AdamW { beta1, beta2, eps } => {
            if st.m.len() != p.len() {
                st.m = vec![0.0; p.len()];
                st.v = vec![0.0; p.len()];
            }
            let c1 = 1.0 - libm::pow(beta1, t as f64);
            let c2 = 1.0 - libm::pow(beta2, t as f64);
            for i in 0..p.len() {
                let gi = g[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * gi;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * gi * gi;
                let mh = st.m[i] / c1;
                let vh = st.v[i] / c2;
                p[i] -= lr * decay * p[i];
                p[i] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
    }
}
