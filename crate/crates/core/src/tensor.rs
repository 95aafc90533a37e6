// SPDX-License-Identifier: Apache-2.0

//! Dense row-major `f64` arrays and the raw numerical kernels behind the
//! differentiable primitives.
//!
//! A [`Tensor`] is a plain value: it carries no graph state, is immutable once
//! built, and can be moved freely between worker threads.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fill policy for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    Uniform(f64, f64),
    Normal(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape { shape: shape.to_vec() });
    }
    Ok(())
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Strides into a `src`-shaped buffer when it is viewed as `target` under
/// trailing-aligned broadcasting; zero for every broadcast dimension.
fn broadcast_strides(src: &[usize], target: &[usize]) -> Option<Vec<usize>> {
    if src.len() > target.len() {
        return None;
    }
    let offset = target.len() - src.len();
    let src_strides = contiguous_strides(src);
    let mut strides = vec![0; target.len()];
    for (i, &dim) in src.iter().enumerate() {
        let t = target[offset + i];
        if dim == t {
            strides[offset + i] = src_strides[i];
        } else if dim != 1 {
            return None;
        }
    }
    Some(strides)
}

/// Calls `f(out_linear, src_linear)` for every element of `target` in
/// row-major order.
fn for_each_strided(target: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = target.iter().product();
    let rank = target.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for out in 0..n {
        f(out, src);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            src += strides[axis];
            if idx[axis] < target[axis] {
                break;
            }
            src -= strides[axis] * target[axis];
            idx[axis] = 0;
        }
    }
}

/// Result shape of numpy-style broadcasting of `a` against `b`.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::mismatch(op, a, b)),
        };
    }
    Ok(out)
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DataLength { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor whose shape was already validated by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Tensor { shape, data: vec![value; n] })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    /// `d × d` identity matrix.
    pub fn eye(d: usize) -> Result<Self> {
        let mut t = Self::zeros([d, d])?;
        for i in 0..d {
            t.data[i * d + i] = 1.0;
        }
        Ok(t)
    }

    /// Creates a tensor filled according to `init`. Stochastic policies draw
    /// from `rng` in row-major order.
    pub fn create<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, init: Init, rng: &mut R) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform(a, b) => (0..n).map(|_| a + (b - a) * rng.random::<f64>()).collect(),
            Init::Normal(mean, std) => {
                let dist = Normal::new(mean, std).map_err(|e| Error::Config(format!("normal init: {e}")))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar { shape: self.shape.clone() });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::mismatch("reshape", &self.shape, &shape));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::mismatch(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Repeats this tensor along broadcast dimensions to fill `target`.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Self> {
        if self.shape == target {
            return Ok(self.clone());
        }
        let strides =
            broadcast_strides(&self.shape, target).ok_or_else(|| Error::mismatch("broadcast", &self.shape, target))?;
        let n: usize = target.iter().product();
        let mut data = vec![0.0; n];
        for_each_strided(target, &strides, |o, s| data[o] = self.data[s]);
        Ok(Tensor { shape: target.to_vec(), data })
    }

    /// Sums over the dimensions along which `target` would be broadcast to
    /// this tensor's shape; the adjoint of [`Tensor::broadcast_to`].
    pub fn sum_to(&self, target: &[usize]) -> Result<Self> {
        if self.shape == target {
            return Ok(self.clone());
        }
        let strides =
            broadcast_strides(target, &self.shape).ok_or_else(|| Error::mismatch("sum_to", &self.shape, target))?;
        check_shape(target)?;
        let mut data = vec![0.0; target.iter().product()];
        for_each_strided(&self.shape, &strides, |o, s| data[s] += self.data[o]);
        Ok(Tensor { shape: target.to_vec(), data })
    }

    /// Sums over `axes`, keeping each reduced axis with size 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Self> {
        let mut target = self.shape.clone();
        for &a in axes {
            if a >= target.len() {
                return Err(Error::mismatch("sum_axes", &self.shape, axes));
            }
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    /// Maximum along the last axis, keeping that axis with size 1.
    pub fn max_last_axis(&self) -> Self {
        let last = *self.shape.last().expect("tensors have rank >= 1");
        let data: Vec<f64> =
            self.data.chunks(last).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = 1;
        Tensor { shape, data }
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (a, b) = (&self.shape, &other.shape);
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::mismatch("matmul", a, b));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = self.data[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::mismatch("transpose", &self.shape, &[]));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor { shape: vec![n, m], data })
    }

    /// Stride-1 convolution with "same" zero padding.
    /// `x: [B, Ci, H, W]`, `w: [Co, Ci, k, k]` with odd `k` → `[B, Co, H, W]`.
    pub fn conv2d(&self, w: &Tensor) -> Result<Self> {
        let (b, ci, h, wd, co, k) = conv_dims(&self.shape, &w.shape)?;
        let pad = k / 2;
        let mut out = vec![0.0; b * co * h * wd];
        for n in 0..b {
            for o in 0..co {
                let out_plane = &mut out[((n * co + o) * h) * wd..((n * co + o) * h + h) * wd];
                for c in 0..ci {
                    let plane = &self.data[((n * ci + c) * h) * wd..((n * ci + c) * h + h) * wd];
                    let kernel = &w.data[((o * ci + c) * k) * k..((o * ci + c) * k + k) * k];
                    for ki in 0..k {
                        for kj in 0..k {
                            let kv = kernel[ki * k + kj];
                            if kv == 0.0 {
                                continue;
                            }
                            // output (y, x) reads input (y + ki - pad, x + kj - pad)
                            let y0 = pad.saturating_sub(ki);
                            let y1 = (h + pad).saturating_sub(ki).min(h);
                            let x0 = pad.saturating_sub(kj);
                            let x1 = (wd + pad).saturating_sub(kj).min(wd);
                            for y in y0..y1 {
                                let iy = y + ki - pad;
                                let orow = &mut out_plane[y * wd..(y + 1) * wd];
                                let irow = &plane[iy * wd..(iy + 1) * wd];
                                for x in x0..x1 {
                                    orow[x] += kv * irow[x + kj - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor { shape: vec![b, co, h, wd], data: out })
    }

    /// Kernel gradient of [`Tensor::conv2d`]: for `x: [B, Ci, H, W]` and output
    /// adjoint `g: [B, Co, H, W]` returns `[Co, Ci, k, k]`.
    pub fn conv2d_kernel_grad(&self, g: &Tensor, k: usize) -> Result<Self> {
        let xs = &self.shape;
        let gs = &g.shape;
        if xs.len() != 4 || gs.len() != 4 || xs[0] != gs[0] || xs[2] != gs[2] || xs[3] != gs[3] || k.is_multiple_of(2) {
            return Err(Error::mismatch("conv2d_kernel_grad", xs, gs));
        }
        let (b, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let co = gs[1];
        let pad = k / 2;
        let mut out = vec![0.0; co * ci * k * k];
        for n in 0..b {
            for o in 0..co {
                let gplane = &g.data[((n * co + o) * h) * wd..((n * co + o) * h + h) * wd];
                for c in 0..ci {
                    let plane = &self.data[((n * ci + c) * h) * wd..((n * ci + c) * h + h) * wd];
                    let kernel = &mut out[((o * ci + c) * k) * k..((o * ci + c) * k + k) * k];
                    for ki in 0..k {
                        for kj in 0..k {
                            let y0 = pad.saturating_sub(ki);
                            let y1 = (h + pad).saturating_sub(ki).min(h);
                            let x0 = pad.saturating_sub(kj);
                            let x1 = (wd + pad).saturating_sub(kj).min(wd);
                            let mut acc = 0.0;
                            for y in y0..y1 {
                                let iy = y + ki - pad;
                                for x in x0..x1 {
                                    acc += gplane[y * wd + x] * plane[iy * wd + x + kj - pad];
                                }
                            }
                            kernel[ki * k + kj] += acc;
                        }
                    }
                }
            }
        }
        Ok(Tensor { shape: vec![co, ci, k, k], data: out })
    }

    /// Swaps the channel axes and rotates every spatial kernel by 180°:
    /// `[Co, Ci, k, k] → [Ci, Co, k, k]`. Convolving an output adjoint with the
    /// result yields the input adjoint of a "same" convolution.
    pub fn kernel_flip_transpose(&self) -> Result<Self> {
        let s = &self.shape;
        if s.len() != 4 || s[2] != s[3] {
            return Err(Error::mismatch("kernel_flip_transpose", s, &[]));
        }
        let (co, ci, k) = (s[0], s[1], s[2]);
        let mut data = vec![0.0; self.numel()];
        for o in 0..co {
            for c in 0..ci {
                for i in 0..k {
                    for j in 0..k {
                        data[((c * co + o) * k + (k - 1 - i)) * k + (k - 1 - j)] =
                            self.data[((o * ci + c) * k + i) * k + j];
                    }
                }
            }
        }
        Ok(Tensor { shape: vec![ci, co, k, k], data })
    }

    /// Flat source indices selected by 2×2 stride-2 max pooling of a
    /// `[B, C, H, W]` tensor, in output row-major order. Ties resolve to the
    /// first position in row-major order.
    pub fn maxpool2x2_indices(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let s = &self.shape;
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::mismatch("maxpool2d", s, &[2, 2]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut idx = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + (2 * y) * w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = base + (2 * y + dy) * w + 2 * x + dx;
                        if self.data[cand] > self.data[best] {
                            best = cand;
                        }
                    }
                    idx.push(best);
                }
            }
        }
        Ok((idx, vec![b, c, oh, ow]))
    }

    pub fn gather(&self, indices: &[usize], shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: indices.iter().map(|&i| self.data[i]).collect() }
    }

    /// Adjoint of [`Tensor::gather`]: accumulates into a zero tensor of `shape`.
    pub fn scatter(&self, indices: &[usize], shape: &[usize]) -> Self {
        let mut data = vec![0.0; shape.iter().product()];
        for (&i, &v) in indices.iter().zip(&self.data) {
            data[i] += v;
        }
        Tensor { shape: shape.to_vec(), data }
    }
}

fn conv_dims(x: &[usize], w: &[usize]) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.len() != 4 || w.len() != 4 || w[1] != x[1] || w[2] != w[3] || w[2].is_multiple_of(2) {
        return Err(Error::mismatch("conv2d", x, w));
    }
    Ok((x[0], x[1], x[2], x[3], w[0], w[2]))
}
