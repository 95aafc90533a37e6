// SPDX-License-Identifier: Apache-2.0

//! Central finite differences, used as an independent oracle for the
//! reverse-mode gradients.

use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference estimate `(f(p + h) - f(p - h)) / 2h` of the gradient
/// of `f` at `params`, one coordinate at a time.
pub fn finite_diff<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let base = params[p].data().to_vec();
        let mut out = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut data = base.clone();
            data[i] = base[i] + h;
            probe[p] = Tensor::new(params[p].shape().to_vec(), data.clone())?;
            let up = f(&probe)?;
            data[i] = base[i] - h;
            probe[p] = Tensor::new(params[p].shape().to_vec(), data)?;
            let down = f(&probe)?;
            out[i] = (up - down) / (2.0 * h);
        }
        probe[p] = params[p].clone();
        grads.push(Tensor::new(params[p].shape().to_vec(), out)?);
    }
    Ok(grads)
}

/// `|a - b| / max(|a|, |b|, floor)` maximised over elements.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}
