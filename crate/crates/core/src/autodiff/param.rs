// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Stable parameter key; dense index into a network's parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Which part of the meta-parameters a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Base-learner weights and biases.
    Base,
    /// Linear warp layers inserted after base layers; meta-learned only.
    Warp,
    /// Candidate-operation parameters adapted per task.
    Operation,
    /// Operation activation-strength logits.
    Strength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamHandle {
    pub id: ParamId,
    pub name: String,
    pub group: ParamGroup,
    pub trainable: bool,
    pub tensor: Tensor,
}

/// Gradients keyed by parameter id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap(BTreeMap<ParamId, Tensor>);

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.0.insert(id, grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }

    /// Adds `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: &GradientMap) -> crate::Result<()> {
        for (id, g) in other.iter() {
            match self.0.get_mut(&id) {
                Some(acc) => *acc = acc.add(g)?,
                None => {
                    self.0.insert(id, g.clone());
                }
            }
        }
        Ok(())
    }
}
