// SPDX-License-Identifier: Apache-2.0

//! Candidate operations: cheap dimension-preserving transforms whose
//! parameters span a subspace of a full matrix (or convolution).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{ParamGroup, ParamId, Var};
use crate::error::{Error, Result};
use crate::net::ParamStore;
use crate::tensor::{Init, Tensor};

/// Kind of candidate operation.
///
/// Fully-connected kinds act on `[B, d]` activations, convolutional kinds on
/// `[B, C, H, W]` feature maps. Every kind maps its input to an output of the
/// same shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Identity,
    MatMul,
    SvdMatMul { rank: usize },
    ElemScale,
    ScalarScale,
    VectorShift,
    ScalarShift,
    ConvIdentity,
    Conv,
    SvdConv { rank: usize },
    Conv1x1,
    MtlScale,
    ChannelScale,
    ChannelShift,
    ConvScalarShift,
}

impl OpKind {
    pub fn is_conv(self) -> bool {
        matches!(
            self,
            OpKind::ConvIdentity
                | OpKind::Conv
                | OpKind::SvdConv { .. }
                | OpKind::Conv1x1
                | OpKind::MtlScale
                | OpKind::ChannelScale
                | OpKind::ChannelShift
                | OpKind::ConvScalarShift
        )
    }

    /// Number of adaptable parameters for the given dimensions.
    pub fn dimensionality(self, dims: OpDims) -> usize {
        match (self, dims) {
            (OpKind::Identity | OpKind::ConvIdentity, _) => 0,
            (OpKind::MatMul, OpDims::Features(d)) => d * d,
            (OpKind::SvdMatMul { rank }, OpDims::Features(d)) => 2 * d * rank + rank,
            (OpKind::ElemScale | OpKind::VectorShift, OpDims::Features(d)) => d,
            (OpKind::ScalarScale | OpKind::ScalarShift | OpKind::ConvScalarShift, _) => 1,
            (OpKind::Conv, OpDims::Channels { channels: c, kernel: k }) => c * c * k * k,
            (OpKind::SvdConv { rank }, OpDims::Channels { channels: c, kernel: k }) => {
                2 * c * c * k * rank + c * c * rank
            }
            (OpKind::Conv1x1 | OpKind::MtlScale, OpDims::Channels { channels: c, .. }) => c * c,
            (OpKind::ChannelScale | OpKind::ChannelShift, OpDims::Channels { channels: c, .. }) => c,
            _ => 0,
        }
    }

    /// Fully-connected kinds as listed in the candidate table, with the
    /// given SVD ranks.
    pub fn fully_connected(svd_ranks: &[usize]) -> Vec<OpKind> {
        let mut kinds = vec![OpKind::Identity, OpKind::MatMul];
        kinds.extend(svd_ranks.iter().map(|&rank| OpKind::SvdMatMul { rank }));
        kinds.extend([OpKind::ElemScale, OpKind::ScalarScale, OpKind::VectorShift, OpKind::ScalarShift]);
        kinds
    }

    pub fn convolutional(svd_ranks: &[usize]) -> Vec<OpKind> {
        let mut kinds = vec![OpKind::ConvIdentity, OpKind::Conv];
        kinds.extend(svd_ranks.iter().map(|&rank| OpKind::SvdConv { rank }));
        kinds.extend([
            OpKind::Conv1x1,
            OpKind::MtlScale,
            OpKind::ChannelScale,
            OpKind::ChannelShift,
            OpKind::ConvScalarShift,
        ]);
        kinds
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::Identity => f.write_str("identity"),
            OpKind::MatMul => f.write_str("matmul"),
            OpKind::SvdMatMul { rank } => write!(f, "svd_matmul:{rank}"),
            OpKind::ElemScale => f.write_str("elem_scale"),
            OpKind::ScalarScale => f.write_str("scalar_scale"),
            OpKind::VectorShift => f.write_str("vector_shift"),
            OpKind::ScalarShift => f.write_str("scalar_shift"),
            OpKind::ConvIdentity => f.write_str("conv_identity"),
            OpKind::Conv => f.write_str("conv"),
            OpKind::SvdConv { rank } => write!(f, "svd_conv:{rank}"),
            OpKind::Conv1x1 => f.write_str("conv1x1"),
            OpKind::MtlScale => f.write_str("mtl_scale"),
            OpKind::ChannelScale => f.write_str("channel_scale"),
            OpKind::ChannelShift => f.write_str("channel_shift"),
            OpKind::ConvScalarShift => f.write_str("conv_scalar_shift"),
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rank) = match s.split_once(':') {
            Some((n, r)) => {
                let rank =
                    r.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad rank in operation `{s}`")))?;
                (n.trim(), Some(rank))
            }
            None => (s, None),
        };
        let kind = match (name, rank) {
            ("identity", None) => OpKind::Identity,
            ("matmul", None) => OpKind::MatMul,
            ("svd_matmul" | "svd", Some(rank)) => OpKind::SvdMatMul { rank },
            ("elem_scale", None) => OpKind::ElemScale,
            ("scalar_scale", None) => OpKind::ScalarScale,
            ("vector_shift", None) => OpKind::VectorShift,
            ("scalar_shift", None) => OpKind::ScalarShift,
            ("conv_identity", None) => OpKind::ConvIdentity,
            ("conv", None) => OpKind::Conv,
            ("svd_conv", Some(rank)) => OpKind::SvdConv { rank },
            ("conv1x1", None) => OpKind::Conv1x1,
            ("mtl_scale", None) => OpKind::MtlScale,
            ("channel_scale", None) => OpKind::ChannelScale,
            ("channel_shift", None) => OpKind::ChannelShift,
            ("conv_scalar_shift", None) => OpKind::ConvScalarShift,
            _ => return Err(Error::Config(format!("unknown candidate operation `{s}`"))),
        };
        Ok(kind)
    }
}

impl Serialize for OpKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OpKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Input dimensions an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpDims {
    /// `[B, d]` activations.
    Features(usize),
    /// `[B, C, H, W]` feature maps convolved with `kernel × kernel` filters.
    Channels { channels: usize, kernel: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOp {
    pub kind: OpKind,
    pub dims: OpDims,
    /// Adaptable parameters.
    pub params: Vec<ParamId>,
    /// Parameters the operation reads but never adapts per task.
    pub frozen_params: Vec<ParamId>,
}

fn identity_kernel(c: usize, k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; c * c * k * k];
    for ch in 0..c {
        data[((ch * c + ch) * k + k / 2) * k + k / 2] = 1.0;
    }
    Tensor::new([c, c, k, k], data)
}

fn check_rank(rank: usize, dim: usize) -> Result<()> {
    if rank == 0 || rank >= dim {
        return Err(Error::InvalidRank { rank, dim });
    }
    Ok(())
}

/// Builds `kind` so that it leaves its input unchanged: matrices and kernels
/// start at identity, scales at 1, shifts at 0. Low-rank kinds use the
/// residual form `z + U diag(σ) Vᵀ z` with `σ = 0` and small random factors.
pub fn build_op<R: Rng + ?Sized>(
    kind: OpKind,
    dims: OpDims,
    store: &mut ParamStore,
    prefix: &str,
    rng: &mut R,
) -> Result<CandidateOp> {
    let mismatch = || Error::Unsupported(format!("operation {kind} cannot act on {dims:?}"));
    let add = |store: &mut ParamStore, name: &str, tensor: Tensor| {
        store.add(format!("{prefix}.{kind}.{name}"), ParamGroup::Operation, tensor)
    };
    let factor = Init::Normal(0.0, 0.01);
    let mut params = Vec::new();
    let mut frozen_params = Vec::new();
    match (kind, dims) {
        (OpKind::Identity, OpDims::Features(_)) | (OpKind::ConvIdentity, OpDims::Channels { .. }) => {}
        (OpKind::MatMul, OpDims::Features(d)) => params.push(add(store, "m", Tensor::eye(d)?)),
        (OpKind::SvdMatMul { rank }, OpDims::Features(d)) => {
            check_rank(rank, d)?;
            params.push(add(store, "u", Tensor::create([d, rank], factor, rng)?));
            params.push(add(store, "sigma", Tensor::zeros([rank])?));
            params.push(add(store, "v", Tensor::create([d, rank], factor, rng)?));
        }
        (OpKind::ElemScale, OpDims::Features(d)) => params.push(add(store, "s", Tensor::ones([d])?)),
        (OpKind::ScalarScale, OpDims::Features(_)) => params.push(add(store, "s", Tensor::ones([1])?)),
        (OpKind::VectorShift, OpDims::Features(d)) => params.push(add(store, "b", Tensor::zeros([d])?)),
        (OpKind::ScalarShift, OpDims::Features(_)) => params.push(add(store, "b", Tensor::zeros([1])?)),
        (OpKind::Conv, OpDims::Channels { channels: c, kernel: k }) => {
            params.push(add(store, "kernel", identity_kernel(c, k)?))
        }
        (OpKind::SvdConv { rank }, OpDims::Channels { channels: c, kernel: k }) => {
            check_rank(rank, k)?;
            params.push(add(store, "u", Tensor::create([c, c, k, rank], factor, rng)?));
            params.push(add(store, "sigma", Tensor::zeros([c, c, rank])?));
            params.push(add(store, "v", Tensor::create([c, c, k, rank], factor, rng)?));
        }
        (OpKind::Conv1x1, OpDims::Channels { channels: c, .. }) => {
            params.push(add(store, "kernel", identity_kernel(c, 1)?))
        }
        (OpKind::MtlScale, OpDims::Channels { channels: c, kernel: k }) => {
            params.push(add(store, "phi", Tensor::ones([c, c])?));
            let name = format!("{prefix}.{kind}.kernel");
            frozen_params.push(store.add(name, ParamGroup::Base, identity_kernel(c, k)?));
        }
        (OpKind::ChannelScale, OpDims::Channels { channels: c, .. }) => {
            params.push(add(store, "s", Tensor::ones([c])?))
        }
        (OpKind::ChannelShift, OpDims::Channels { channels: c, .. }) => {
            params.push(add(store, "b", Tensor::zeros([c])?))
        }
        (OpKind::ConvScalarShift, OpDims::Channels { .. }) => params.push(add(store, "b", Tensor::zeros([1])?)),
        _ => return Err(mismatch()),
    }
    Ok(CandidateOp { kind, dims, params, frozen_params })
}

fn check_input(op: &CandidateOp, shape: &[usize]) -> Result<()> {
    let ok = match op.dims {
        OpDims::Features(d) => shape.len() == 2 && shape[1] == d,
        OpDims::Channels { channels, .. } => shape.len() == 4 && shape[1] == channels,
    };
    if ok {
        Ok(())
    } else {
        let expected = match op.dims {
            OpDims::Features(d) => vec![d],
            OpDims::Channels { channels, .. } => vec![channels],
        };
        Err(Error::mismatch("candidate operation", shape, &expected))
    }
}

/// Applies one candidate operation to `z`; `vars` binds every parameter id.
pub fn apply_op<'g>(op: &CandidateOp, z: Var<'g>, vars: &[Var<'g>]) -> Result<Var<'g>> {
    check_input(op, &z.shape())?;
    let p = |i: usize| vars[op.params[i].0];
    match op.kind {
        OpKind::Identity | OpKind::ConvIdentity => Ok(z),
        OpKind::MatMul => z.matmul(p(0)),
        OpKind::SvdMatMul { .. } => {
            let (u, sigma, v) = (p(0), p(1), p(2));
            let delta = z.matmul(v)?.mul(sigma)?.matmul(u.transpose()?)?;
            z.add(delta)
        }
        OpKind::ElemScale | OpKind::ScalarScale => z.mul(p(0)),
        OpKind::VectorShift | OpKind::ScalarShift | OpKind::ConvScalarShift => z.add(p(0)),
        OpKind::Conv | OpKind::Conv1x1 => z.conv2d(p(0)),
        OpKind::SvdConv { rank } => {
            let OpDims::Channels { channels: c, kernel: k } = op.dims else { unreachable!("validated by check_input") };
            let u = p(0).reshape(&[c, c, k, 1, rank])?;
            let sigma = p(1).reshape(&[c, c, 1, 1, rank])?;
            let v = p(2).reshape(&[c, c, 1, k, rank])?;
            let delta = u.mul(sigma)?.mul(v)?.sum_axes(&[4])?.reshape(&[c, c, k, k])?;
            z.add(z.conv2d(delta)?)
        }
        OpKind::MtlScale => {
            let OpDims::Channels { channels: c, .. } = op.dims else { unreachable!("validated by check_input") };
            let kernel = vars[op.frozen_params[0].0];
            let scaled = kernel.mul(p(0).reshape(&[c, c, 1, 1])?)?;
            z.conv2d(scaled)
        }
        OpKind::ChannelScale => {
            let c = z.shape()[1];
            z.mul(p(0).reshape(&[1, c, 1, 1])?)
        }
        OpKind::ChannelShift => {
            let c = z.shape()[1];
            z.add(p(0).reshape(&[1, c, 1, 1])?)
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Graph;

    fn run(kind: OpKind, dims: OpDims, set: &[(&str, Tensor)], z: Tensor) -> Result<Tensor> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let op = build_op(kind, dims, &mut store, "t", &mut rng)?;
        for (suffix, value) in set {
            let id = store.handles().iter().find(|h| h.name.ends_with(suffix)).unwrap().id;
            store.set(id, value.clone())?;
        }
        let g = Graph::new();
        let vars: Vec<_> = store.handles().iter().map(|h| g.constant(h.tensor.clone())).collect();
        Ok(apply_op(&op, g.constant(z), &vars)?.tensor())
    }

    #[test]
    fn scalar_scale_at_init() {
        let z = Tensor::new([1, 2], vec![3.0, -1.0]).unwrap();
        let out = run(OpKind::ScalarScale, OpDims::Features(2), &[], z.clone()).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn matmul_starts_at_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let op = build_op(OpKind::MatMul, OpDims::Features(2), &mut store, "t", &mut rng).unwrap();
        assert_eq!(store.tensor(op.params[0]).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn svd_delta_is_zero_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Tensor::create([3, 40], Init::Normal(0.0, 1.0), &mut rng).unwrap();
        let out = run(OpKind::SvdMatMul { rank: 5 }, OpDims::Features(40), &[], z.clone()).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn scalar_shift_example() {
        let z = Tensor::new([1, 2], vec![0.0, 1.0]).unwrap();
        let b = Tensor::new([1], vec![2.0]).unwrap();
        let out = run(OpKind::ScalarShift, OpDims::Features(2), &[(".b", b)], z).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0]);
    }

    #[test]
    fn elem_scale_example() {
        let z = Tensor::new([1, 2], vec![1.0, 4.0]).unwrap();
        let s = Tensor::new([2], vec![2.0, 0.5]).unwrap();
        let out = run(OpKind::ElemScale, OpDims::Features(2), &[(".s", s)], z).unwrap();
        assert_eq!(out.data(), &[2.0, 2.0]);
    }

    #[test]
    fn channel_shift_example() {
        let z = Tensor::new([1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let b = Tensor::new([2], vec![1.0, -1.0]).unwrap();
        let dims = OpDims::Channels { channels: 2, kernel: 3 };
        let out = run(OpKind::ChannelShift, dims, &[(".b", b)], z.clone()).unwrap();
        let expected: Vec<f64> =
            z.data().iter().enumerate().map(|(i, v)| if i < 4 { v + 1.0 } else { v - 1.0 }).collect();
        assert_eq!(out.data(), expected.as_slice());
    }

    #[test]
    fn rank_must_stay_below_dimension() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = build_op(OpKind::SvdMatMul { rank: 4 }, OpDims::Features(4), &mut store, "t", &mut rng);
        assert!(matches!(err, Err(Error::InvalidRank { rank: 4, dim: 4 })));
        let dims = OpDims::Channels { channels: 2, kernel: 3 };
        let err = build_op(OpKind::SvdConv { rank: 3 }, dims, &mut store, "t", &mut rng);
        assert!(matches!(err, Err(Error::InvalidRank { rank: 3, dim: 3 })));
    }

    #[test]
    fn kind_column_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_op(OpKind::Conv, OpDims::Features(3), &mut store, "t", &mut rng).is_err());
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let z = Tensor::zeros([1, 3]).unwrap();
        let err = run(OpKind::ElemScale, OpDims::Features(2), &[], z).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn names_round_trip() {
        for kind in OpKind::fully_connected(&[5]).into_iter().chain(OpKind::convolutional(&[1])) {
            assert_eq!(kind.to_string().parse::<OpKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<OpKind>().is_err());
    }
}
