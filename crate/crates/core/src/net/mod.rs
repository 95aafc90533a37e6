// SPDX-License-Identifier: Apache-2.0

//! Candidate operations, operation sets and the networks that interleave
//! them with base-learner layers.

mod network;
pub mod ops;
pub mod opset;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamHandle, ParamId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use network::{Layer, Network, Partition};
pub use ops::{apply_op, build_op, CandidateOp, OpDims, OpKind};
pub use opset::{apply_operation_set, fold_operation_set, strengths_from_logits, OperationSet};

/// Which meta-learner a network is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    /// Operation sets before every base layer and after the output; only
    /// operation parameters adapt per task.
    Sap,
    /// Plain network; every base parameter adapts per task.
    Maml,
    /// Plain network with linear warps after base layers; warps are only
    /// meta-learned.
    Tnet,
}

impl LearnerKind {
    /// Parameter group updated by the inner loop.
    pub fn adapted_group(self) -> ParamGroup {
        match self {
            LearnerKind::Sap => ParamGroup::Operation,
            LearnerKind::Maml | LearnerKind::Tnet => ParamGroup::Base,
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LearnerKind::Sap => "sap",
            LearnerKind::Maml => "maml",
            LearnerKind::Tnet => "tnet",
        })
    }
}

/// Base-learner backbone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Fully-connected ReLU network with layer widths `sizes` (input first).
    Mlp { sizes: Vec<usize> },
    /// `blocks` × (3×3 conv, batch norm, ReLU, 2×2 max-pool) then a linear head.
    Conv { in_channels: usize, side: usize, channels: usize, blocks: usize, classes: usize, kernel: usize },
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Mlp { sizes } => {
                if sizes.len() < 2 || sizes.contains(&0) {
                    return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
                }
            }
            Architecture::Conv { in_channels, side, channels, blocks, classes, kernel } => {
                if *in_channels == 0 || *channels == 0 || *classes < 2 || *blocks == 0 {
                    return Err(Error::Config("conv backbone needs channels, blocks and ≥2 classes".into()));
                }
                if kernel % 2 == 0 {
                    return Err(Error::Config(format!("kernel size {kernel} must be odd")));
                }
                if side >> blocks == 0 || side % (1 << blocks) != 0 {
                    return Err(Error::Config(format!("image side {side} must be divisible by 2^{blocks}")));
                }
            }
        }
        Ok(())
    }

    /// Input dimensions of every operation-set position, in forward order:
    /// one before each base layer and one after the output.
    pub fn op_positions(&self) -> Vec<OpDims> {
        match self {
            Architecture::Mlp { sizes } => sizes.iter().map(|&d| OpDims::Features(d)).collect(),
            Architecture::Conv { in_channels, side, channels, blocks, classes, kernel } => {
                let mut dims: Vec<OpDims> = (0..*blocks)
                    .map(|b| OpDims::Channels {
                        channels: if b == 0 { *in_channels } else { *channels },
                        kernel: *kernel,
                    })
                    .collect();
                let spatial = side >> blocks;
                dims.push(OpDims::Features(channels * spatial * spatial));
                dims.push(OpDims::Features(*classes));
                dims
            }
        }
    }

    /// Number of base layers that may be followed by a warp.
    pub fn base_layer_count(&self) -> usize {
        match self {
            Architecture::Mlp { sizes } => sizes.len() - 1,
            Architecture::Conv { blocks, .. } => blocks + 1,
        }
    }

    /// Shape of one example (without the batch axis).
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            Architecture::Mlp { sizes } => vec![sizes[0]],
            Architecture::Conv { in_channels, side, .. } => vec![*in_channels, *side, *side],
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::Mlp { sizes } => *sizes.last().unwrap(),
            Architecture::Conv { classes, .. } => *classes,
        }
    }
}

/// Default SVD ranks for fully-connected pools.
pub const DEFAULT_FC_SVD_RANKS: [usize; 3] = [5, 10, 15];
/// Default SVD ranks for convolutional pools (must stay below the kernel size).
pub const DEFAULT_CONV_SVD_RANKS: [usize; 2] = [1, 2];

/// Default candidate pool for one position.
///
/// One-dimensional positions only get the kinds that are not duplicates of
/// each other there (identity, scalar scale, scalar shift); low-rank kinds
/// are kept only where the rank is below the dimension.
pub fn default_pool(dims: OpDims) -> Vec<OpKind> {
    match dims {
        OpDims::Features(1) => vec![OpKind::Identity, OpKind::ScalarScale, OpKind::ScalarShift],
        OpDims::Features(d) => {
            let ranks: Vec<usize> = DEFAULT_FC_SVD_RANKS.iter().copied().filter(|&r| r < d).collect();
            OpKind::fully_connected(&ranks)
        }
        OpDims::Channels { kernel, .. } => {
            let ranks: Vec<usize> = DEFAULT_CONV_SVD_RANKS.iter().copied().filter(|&r| r < kernel).collect();
            OpKind::convolutional(&ranks)
        }
    }
}

/// Everything needed to build a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: Architecture,
    pub learner: LearnerKind,
    /// Candidate kinds per operation-set position; an empty list means no
    /// operation set there. `None` selects [`default_pool`] everywhere.
    pub pools: Option<Vec<Vec<OpKind>>>,
    /// Which base layers get a warp (T-Net only). `None` means all of them.
    pub warps: Option<Vec<bool>>,
}

impl NetworkConfig {
    pub fn new(arch: Architecture, learner: LearnerKind) -> Self {
        NetworkConfig { arch, learner, pools: None, warps: None }
    }

    pub fn with_pools(mut self, pools: Vec<Vec<OpKind>>) -> Self {
        self.pools = Some(pools);
        self
    }

    /// Pools that will actually be built, one entry per position.
    pub fn resolved_pools(&self) -> Result<Vec<Vec<OpKind>>> {
        let positions = self.arch.op_positions();
        match &self.pools {
            None => Ok(positions.into_iter().map(default_pool).collect()),
            Some(p) if p.len() == positions.len() => Ok(p.clone()),
            Some(p) => Err(Error::Config(format!(
                "{} operation-set pools given, the backbone has {} positions",
                p.len(),
                positions.len()
            ))),
        }
    }

    pub fn resolved_warps(&self) -> Result<Vec<bool>> {
        let n = self.arch.base_layer_count();
        match &self.warps {
            None => Ok(vec![true; n]),
            Some(w) if w.len() == n => Ok(w.clone()),
            Some(w) => Err(Error::Config(format!("{} warp flags given, expected {n}", w.len()))),
        }
    }
}

/// Flat registry of named parameters; [`ParamId`]s index into it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    handles: Vec<ParamHandle>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, group: ParamGroup, tensor: Tensor) -> ParamId {
        let id = ParamId(self.handles.len());
        self.handles.push(ParamHandle { id, name, group, trainable: true, tensor });
        id
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn handles(&self) -> &[ParamHandle] {
        &self.handles
    }

    pub fn handle(&self, id: ParamId) -> &ParamHandle {
        &self.handles[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.handles[id.0].tensor
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let handle =
            self.handles.get_mut(id.0).ok_or_else(|| Error::Config(format!("unknown parameter id {}", id.0)))?;
        if handle.tensor.shape() != tensor.shape() {
            return Err(Error::mismatch("set parameter", handle.tensor.shape(), tensor.shape()));
        }
        handle.tensor = tensor;
        Ok(())
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.handles[id.0].trainable = trainable;
    }

    pub fn ids_in(&self, group: ParamGroup) -> Vec<ParamId> {
        self.handles.iter().filter(|h| h.group == group).map(|h| h.id).collect()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.handles.iter().filter(|h| h.trainable).map(|h| h.id).collect()
    }
}
