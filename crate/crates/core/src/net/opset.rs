// SPDX-License-Identifier: Apache-2.0

use rand::Rng;

use crate::autodiff::{softmax, ParamGroup, ParamId, Var};
use crate::error::{Error, Result};
use crate::net::ops::{apply_op, build_op, CandidateOp, OpDims, OpKind};
use crate::net::ParamStore;
use crate::tensor::Tensor;

/// A layer's pool of candidate operations mixed by softmax strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationSet {
    pub ops: Vec<CandidateOp>,
    /// Unconstrained strength logits, one per operation.
    pub logits: ParamId,
    pub dims: OpDims,
}

impl OperationSet {
    /// Builds every kind in `kinds` at identity and equal logits.
    pub fn build<R: Rng + ?Sized>(
        kinds: &[OpKind],
        dims: OpDims,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::EmptyOperationSet);
        }
        let ops = kinds.iter().map(|&kind| build_op(kind, dims, store, prefix, rng)).collect::<Result<Vec<_>>>()?;
        let logits = store.add(format!("{prefix}.logits"), ParamGroup::Strength, Tensor::zeros([kinds.len()])?);
        Ok(OperationSet { ops, logits, dims })
    }

    pub fn kinds(&self) -> Vec<OpKind> {
        self.ops.iter().map(|o| o.kind).collect()
    }

    /// Softmax of the logits held in `store`.
    pub fn strengths(&self, store: &ParamStore) -> Vec<f64> {
        strengths_from_logits(store.tensor(self.logits).data())
    }
}

/// Numerically stable softmax of a logit vector.
pub fn strengths_from_logits(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Convex combination `Σ_i softmax(logits)_i · o_i(z)`.
pub fn apply_operation_set<'g>(set: &OperationSet, z: Var<'g>, vars: &[Var<'g>]) -> Result<Var<'g>> {
    if set.ops.is_empty() {
        return Err(Error::EmptyOperationSet);
    }
    let weights = softmax(vars[set.logits.0])?;
    let mut out: Option<Var<'g>> = None;
    for (i, op) in set.ops.iter().enumerate() {
        let partial = apply_op(op, z, vars)?.mul(weights.pick(i)?)?;
        out = Some(match out {
            Some(acc) => acc.add(partial)?,
            None => partial,
        });
    }
    Ok(out.expect("non-empty"))
}

/// Collapses a fully-connected operation set into one `(d+1) × (d+1)` matrix
/// acting on homogeneous column vectors `[z; 1]`, so that
/// `folded · [z; 1] = [apply_operation_set(z); 1]`.
pub fn fold_operation_set(set: &OperationSet, store: &ParamStore, d: usize) -> Result<Tensor> {
    if set.dims != OpDims::Features(d) {
        return Err(Error::Unsupported(format!(
            "folding needs a fully-connected set of dimension {d}, got {:?}",
            set.dims
        )));
    }
    let weights = set.strengths(store);
    let n = d + 1;
    let mut folded = vec![0.0; n * n];
    let eye = |folded: &mut [f64], w: f64| (0..d).for_each(|i| folded[i * n + i] += w);
    for (op, &w) in set.ops.iter().zip(&weights) {
        let p = |i: usize| store.tensor(op.params[i]).data();
        match op.kind {
            OpKind::Identity => eye(&mut folded, w),
            OpKind::MatMul => {
                // rows multiply on the right: column form uses Mᵀ
                let m = p(0);
                for i in 0..d {
                    for j in 0..d {
                        folded[i * n + j] += w * m[j * d + i];
                    }
                }
            }
            OpKind::SvdMatMul { rank } => {
                eye(&mut folded, w);
                let (u, sigma, v) = (p(0), p(1), p(2));
                for i in 0..d {
                    for j in 0..d {
                        let low_rank: f64 = (0..rank).map(|r| u[i * rank + r] * sigma[r] * v[j * rank + r]).sum();
                        folded[i * n + j] += w * low_rank;
                    }
                }
            }
            OpKind::ElemScale => {
                let s = p(0);
                (0..d).for_each(|i| folded[i * n + i] += w * s[i]);
            }
            OpKind::ScalarScale => eye(&mut folded, w * p(0)[0]),
            OpKind::VectorShift => {
                eye(&mut folded, w);
                let b = p(0);
                (0..d).for_each(|i| folded[i * n + d] += w * b[i]);
            }
            OpKind::ScalarShift => {
                eye(&mut folded, w);
                let b = p(0)[0];
                (0..d).for_each(|i| folded[i * n + d] += w * b);
            }
            other => {
                return Err(Error::Unsupported(format!("cannot fold convolutional operation {other}")));
            }
        }
    }
    folded[d * n + d] = 1.0;
    Tensor::new([n, n], folded)
}
