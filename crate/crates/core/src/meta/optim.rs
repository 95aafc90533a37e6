// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, ParamId};
use crate::error::{Error, Result};
use crate::net::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Outer-loop optimizer with per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterOptimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl OuterOptimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OuterOptimizer { kind, lr, steps: 0, moments: BTreeMap::new() }
    }

    /// Rebuilds an optimizer from saved state.
    pub fn from_state(kind: OptimizerKind, lr: f64, steps: u64, moments: BTreeMap<ParamId, (Tensor, Tensor)>) -> Self {
        OuterOptimizer { kind, lr, steps, moments }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Completed update steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Adam first and second moments; empty for SGD.
    pub fn moments(&self) -> &BTreeMap<ParamId, (Tensor, Tensor)> {
        &self.moments
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradientMap) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Divergence { step: self.steps as usize, context: "non-finite outer gradient".into() });
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (id, g) in grads.iter() {
            if !store.handle(id).trainable {
                continue;
            }
            let theta = store.tensor(id);
            let updated = match self.kind {
                OptimizerKind::Sgd => theta.sub(&g.scale(self.lr))?,
                OptimizerKind::Adam => {
                    let (m, v) = self.moments.entry(id).or_insert_with(|| {
                        (Tensor::zeros(g.shape().to_vec()).unwrap(), Tensor::zeros(g.shape().to_vec()).unwrap())
                    });
                    *m = m.zip_map(g, "adam", |m, g| ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g)?;
                    *v = v.zip_map(g, "adam", |v, g| ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g)?;
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    let lr = self.lr;
                    let step = m.zip_map(v, "adam", |m, v| lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS))?;
                    theta.sub(&step)?
                }
            };
            store.set(id, updated)?;
        }
        Ok(())
    }
}
