// SPDX-License-Identifier: Apache-2.0

//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)
//! values, with support for differentiating through gradients.

pub mod check;
mod graph;
pub mod nn;
mod ops;
mod param;

pub use check::{finite_diff, max_relative_error, DEFAULT_STEP};
pub use graph::{Graph, Var};
pub use nn::{accuracy, batch_norm, log_softmax, mse_loss, softmax, softmax_cross_entropy};
pub use param::{GradientMap, ParamGroup, ParamHandle, ParamId};
