// SPDX-License-Identifier: Apache-2.0

//! Bilevel training: per-task adaptation, the meta-objective and the outer update.

mod adapt;
mod optim;
mod warp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adapt::{
    adapt, inner_adapt, maml_adapt, meta_gradient, meta_objective, outer_step, task_loss, task_metric, tnet_adapt,
    AdaptResult, MetaGradient,
};
pub use optim::{OptimizerKind, OuterOptimizer, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use warp::{post_update_output, predict_post_update_output};

/// Whether the outer gradient flows through the inner-loop gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientOrder {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner (per-task) learning rate α.
    pub inner_lr: f64,
    /// Outer (meta) learning rate β.
    pub outer_lr: f64,
    pub inner_steps_train: usize,
    pub inner_steps_eval: usize,
    pub meta_batch_size: usize,
    pub gradient_order: GradientOrder,
    pub outer_optimizer: OptimizerKind,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 0.01,
            outer_lr: 0.001,
            inner_steps_train: 1,
            inner_steps_eval: 1,
            meta_batch_size: 4,
            gradient_order: GradientOrder::Second,
            outer_optimizer: OptimizerKind::Adam,
        }
    }
}

impl MetaConfig {
    /// Zero learning rates are accepted as a degenerate "no motion" setting.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.inner_steps_train == 0 {
            return Err(Error::Config("inner_steps_train must be at least 1".into()));
        }
        if self.meta_batch_size == 0 {
            return Err(Error::Config("meta_batch_size must be at least 1".into()));
        }
        if self.inner_steps_eval < self.inner_steps_train {
            return Err(Error::Config(format!(
                "inner_steps_eval ({}) must be at least inner_steps_train ({})",
                self.inner_steps_eval, self.inner_steps_train
            )));
        }
        Ok(())
    }
}
