// SPDX-License-Identifier: Apache-2.0

//! Losses and normalization layers composed from the differentiable primitives.

use super::graph::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean of squared differences over all elements.
pub fn mse_loss<'g>(pred: Var<'g>, target: Var<'g>) -> Result<Var<'g>> {
    let (ps, ts) = (pred.shape(), target.shape());
    if ps != ts {
        return Err(Error::mismatch("mse_loss", &ps, &ts));
    }
    pred.sub(target)?.square().mean()
}

/// Softmax along the last axis.
pub fn softmax<'g>(x: Var<'g>) -> Result<Var<'g>> {
    // the row maximum is treated as a constant; softmax is shift invariant
    let shift = x.graph().constant(x.value().max_last_axis());
    let e = x.sub(shift)?.exp();
    let last = e.shape().len() - 1;
    let total = e.sum_axes(&[last])?;
    e.mul(total.powf(-1.0))
}

pub fn log_softmax<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let shift = x.graph().constant(x.value().max_last_axis());
    let z = x.sub(shift)?;
    let last = z.shape().len() - 1;
    let lse = z.exp().sum_axes(&[last])?.ln();
    z.sub(lse)
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`).
///
/// `logits` is either a single `[N]` vector (one label) or a `[B, N]` batch.
pub fn softmax_cross_entropy<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let shape = logits.shape();
    let (batch, classes) = match shape.as_slice() {
        [n] => (1, *n),
        [b, n] => (*b, *n),
        _ => return Err(Error::mismatch("softmax_cross_entropy", &shape, &[])),
    };
    if labels.len() != batch {
        return Err(Error::mismatch("softmax_cross_entropy", &shape, &[labels.len()]));
    }
    let mut onehot = vec![0.0; batch * classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        onehot[row * classes + label] = 1.0;
    }
    let onehot = logits.graph().constant(Tensor::new(shape.clone(), onehot)?);
    let picked = log_softmax(logits)?.mul(onehot)?.sum()?;
    Ok(picked.scale(-1.0 / batch as f64))
}

/// Normalizes each channel with statistics of the current batch, then applies
/// the per-channel affine `gamma`, `beta`.
///
/// Accepts `[B, C, H, W]` or `[B, C]` inputs; `gamma` and `beta` have shape `[C]`.
pub fn batch_norm<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Result<Var<'g>> {
    let shape = x.shape();
    let (axes, affine_shape): (&[usize], Vec<usize>) = match shape.as_slice() {
        [_, c, _, _] => (&[0, 2, 3], vec![1, *c, 1, 1]),
        [_, c] => (&[0], vec![1, *c]),
        _ => return Err(Error::mismatch("batch_norm", &shape, &[])),
    };
    let c = affine_shape[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::mismatch("batch_norm", &shape, &gamma.shape()));
    }
    let count = shape.iter().product::<usize>() / c;
    let inv = 1.0 / count as f64;
    let mean = x.sum_axes(axes)?.scale(inv);
    let centered = x.sub(mean)?;
    let var = centered.square().sum_axes(axes)?.scale(inv);
    let normed = centered.mul(var.add_scalar(eps).powf(-0.5))?;
    normed.mul(gamma.reshape(&affine_shape)?)?.add(beta.reshape(&affine_shape)?)
}

/// Fraction of rows of `logits` whose arg-max equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = *logits.shape().last().unwrap();
    let hits = logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| {
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == label
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}
