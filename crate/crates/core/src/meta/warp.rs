// SPDX-License-Identifier: Apache-2.0

//! A frozen linear layer `W` after an adapted one `O` preconditions the
//! update of `O`: after one step, `v_new = v − α (W ∇_O L) x`.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn column(x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [n] => x.reshape([*n, 1]),
        [_, 1] => Ok(x.clone()),
        other => Err(Error::mismatch("warp input", other, &[other[0], 1])),
    }
}

fn gradient_wrt_o<L>(w: &Tensor, o: &Tensor, x: &Tensor, loss: &L) -> Result<(Tensor, Tensor)>
where
    L: for<'g> Fn(Var<'g>) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let (wv, ov, xv) = (g.constant(w.clone()), g.leaf(o.clone()), g.constant(column(x)?));
    let v = wv.matmul(ov)?.matmul(xv)?;
    let l = loss(v)?;
    let grad = g.gradient(l, &[ov], false)?.remove(0).tensor();
    Ok((v.tensor(), grad))
}

/// Prediction `v − α (W ∇_O L) x` for `v = W O x` after one gradient step on `O`.
pub fn predict_post_update_output<L>(w: &Tensor, o: &Tensor, x: &Tensor, alpha: f64, loss: L) -> Result<Tensor>
where
    L: for<'g> Fn(Var<'g>) -> Result<Var<'g>>,
{
    let (v, grad) = gradient_wrt_o(w, o, x, &loss)?;
    let delta = w.matmul(&grad)?.matmul(&column(x)?)?;
    v.sub(&delta.scale(alpha))
}

/// Actual output `W (O − α ∇_O L) x` after the same step.
pub fn post_update_output<L>(w: &Tensor, o: &Tensor, x: &Tensor, alpha: f64, loss: L) -> Result<Tensor>
where
    L: for<'g> Fn(Var<'g>) -> Result<Var<'g>>,
{
    let (_, grad) = gradient_wrt_o(w, o, x, &loss)?;
    let stepped = o.sub(&grad.scale(alpha))?;
    w.matmul(&stepped)?.matmul(&column(x)?)
}
