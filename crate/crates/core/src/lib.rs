// SPDX-License-Identifier: Apache-2.0

//! Subspace adaptation prior (SAP) meta-learning.
//!
//! SAP meta-learns three things at once: initial base-learner weights, the
//! initial parameters of per-layer pools of cheap candidate operations, and
//! softmax activation strengths over each pool. When adapting to a new task
//! only the operation parameters move, so the strengths decide which
//! parameter subspaces gradient descent may use. MAML and T-Net baselines
//! share the same machinery.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod meta;
pub mod net;
pub mod tasks;
pub mod tensor;

pub use autodiff::{GradientMap, Graph, ParamGroup, ParamHandle, ParamId, Var};
pub use error::{Error, Result};
pub use tensor::{Init, Tensor};
