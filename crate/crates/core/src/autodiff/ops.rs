// SPDX-License-Identifier: Apache-2.0

//! Differentiable primitives on [`Var`].
//!
//! Every backward rule is written in terms of these same primitives, which is
//! what makes gradients of gradients available.

use std::rc::Rc;

use super::graph::{Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{broadcast_shape, Tensor};

impl<'g> Var<'g> {
    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        self.graph.push(value, op, &[self.id])
    }

    fn same_graph(&self, other: &Var<'g>) {
        debug_assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
    }

    /// Broadcasts both operands to their common shape.
    fn broadcast_pair(&self, other: Var<'g>, op: &'static str) -> Result<(Var<'g>, Var<'g>)> {
        self.same_graph(&other);
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return Ok((*self, other));
        }
        let target = broadcast_shape(op, &sa, &sb)?;
        Ok((self.broadcast_to(&target)?, other.broadcast_to(&target)?))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.broadcast_pair(other, "add")?;
        let value = a.value().add(&b.value())?;
        Ok(self.graph.push(value, Op::Add(a.id, b.id), &[a.id, b.id]))
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.broadcast_pair(other, "sub")?;
        let value = a.value().sub(&b.value())?;
        Ok(self.graph.push(value, Op::Sub(a.id, b.id), &[a.id, b.id]))
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = self.broadcast_pair(other, "mul")?;
        let value = a.value().mul(&b.value())?;
        Ok(self.graph.push(value, Op::Mul(a.id, b.id), &[a.id, b.id]))
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        self.unary(self.value().scale(c), Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g> {
        self.unary(self.value().map(|v| v + c), Op::AddScalar(self.id))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'g>> {
        if self.shape() == shape {
            return Ok(*self);
        }
        let value = self.value().broadcast_to(shape)?;
        Ok(self.unary(value, Op::BroadcastTo(self.id)))
    }

    /// Sums over broadcast dimensions down to `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Var<'g>> {
        if self.shape() == shape {
            return Ok(*self);
        }
        let value = self.value().sum_to(shape)?;
        Ok(self.unary(value, Op::SumTo(self.id)))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Var<'g>> {
        self.sum_to(&[1])
    }

    pub fn mean(&self) -> Result<Var<'g>> {
        let n = self.value().numel() as f64;
        Ok(self.sum()?.scale(1.0 / n))
    }

    /// Sums over `axes`, keeping them with size 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var<'g>> {
        let mut target = self.shape();
        for &a in axes {
            if a >= target.len() {
                return Err(Error::mismatch("sum_axes", &target, axes));
            }
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let value = self.value().matmul(&other.value())?;
        Ok(self.graph.push(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn transpose(&self) -> Result<Var<'g>> {
        let value = self.value().transpose()?;
        Ok(self.unary(value, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        if self.shape() == shape {
            return Ok(*self);
        }
        let value = self.value().reshape(shape.to_vec())?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    /// Collapses every axis after the first: `[B, ...] → [B, prod(...)]`.
    pub fn flatten(&self) -> Result<Var<'g>> {
        let s = self.shape();
        let rest: usize = s[1..].iter().product();
        self.reshape(&[s[0], rest.max(1)])
    }

    /// Rectified linear unit; the derivative at 0 is 0.
    pub fn relu(&self) -> Var<'g> {
        self.unary(self.value().map(|v| v.max(0.0)), Op::Relu(self.id))
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(self.value().map(f64::ln), Op::Ln(self.id))
    }

    pub fn powf(&self, c: f64) -> Var<'g> {
        self.unary(self.value().map(|v| v.powf(c)), Op::Powf(self.id, c))
    }

    pub fn square(&self) -> Var<'g> {
        self.powf(2.0)
    }

    /// Stride-1 "same" convolution, `[B, Ci, H, W] ⊛ [Co, Ci, k, k]`.
    pub fn conv2d(&self, kernel: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&kernel);
        let value = self.value().conv2d(&kernel.value())?;
        Ok(self.graph.push(value, Op::Conv2d(self.id, kernel.id), &[self.id, kernel.id]))
    }

    /// Kernel-shaped correlation of an input with an output adjoint.
    pub fn conv2d_kernel_grad(&self, out_grad: Var<'g>, k: usize) -> Result<Var<'g>> {
        self.same_graph(&out_grad);
        let value = self.value().conv2d_kernel_grad(&out_grad.value(), k)?;
        Ok(self.graph.push(value, Op::ConvKernelGrad(self.id, out_grad.id), &[self.id, out_grad.id]))
    }

    pub fn kernel_flip_transpose(&self) -> Result<Var<'g>> {
        let value = self.value().kernel_flip_transpose()?;
        Ok(self.unary(value, Op::KernelFlip(self.id)))
    }

    /// 2×2 stride-2 max pooling over `[B, C, H, W]`; ties go to the first
    /// element in row-major order.
    pub fn maxpool2x2(&self) -> Result<Var<'g>> {
        let (idx, shape) = self.value().maxpool2x2_indices()?;
        Ok(self.gather(idx.into(), &shape))
    }

    pub(crate) fn gather(&self, indices: Rc<[usize]>, shape: &[usize]) -> Var<'g> {
        let value = self.value().gather(&indices, shape);
        self.unary(value, Op::Gather(self.id, indices))
    }

    pub(crate) fn scatter(&self, indices: Rc<[usize]>, shape: &[usize]) -> Var<'g> {
        let value = self.value().scatter(&indices, shape);
        self.unary(value, Op::Scatter(self.id, indices))
    }

    /// Element `index` of the flattened tensor, shape `[1]`.
    pub fn pick(&self, index: usize) -> Result<Var<'g>> {
        let value = self.value();
        if index >= value.numel() {
            return Err(Error::mismatch("pick", value.shape(), &[index]));
        }
        let v = Tensor::scalar(value.data()[index]);
        Ok(self.unary(v, Op::Pick(self.id, index)))
    }

    /// Places this one-element tensor at `index` of a zero tensor of `shape`.
    pub(crate) fn embed(&self, index: usize, shape: &[usize]) -> Result<Var<'g>> {
        let mut data = Tensor::zeros(shape.to_vec())?.into_data();
        if index >= data.len() {
            return Err(Error::mismatch("embed", shape, &[index]));
        }
        data[index] = self.value().item()?;
        let t = Tensor::from_parts(shape.to_vec(), data);
        Ok(self.unary(t, Op::Embed(self.id, index)))
    }
}
