//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar node replays the record in reverse and
//! returns one gradient per tracked leaf. A graph is meant to be rebuilt for
//! each forward pass.
//!
//! Subgradient conventions at non-differentiable points: the ReLU derivative
//! at 0 is 0 and max-pool routes the gradient to the first maximal entry in
//! row-major block order.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{bhwc, PadSpec, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    ZeroPad { x: Var, pad: PadSpec, dims: [usize; 4] },
    Relu { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Upsample2 { x: Var, dims: [usize; 4] },
    Concat { a: Var, b: Var, ca: usize, cb: usize },
    SliceLast { x: Var, start: usize, end: usize, c: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, c: T },
    ChannelBias { x: Var, b: Var },
    ChannelScale { x: Var, g: Var },
    ChannelScaleConst { x: Var, scale: Vec<T> },
    BatchNormalize { x: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Dense { x: Var, w: Var, rows: usize, din: usize, dout: usize },
    Reshape { x: Var },
    Sum { x: Var },
    SumSquares { x: Var },
    PowAbsSum { x: Var, p: T, batch: usize },
    DotConst { x: Var, w: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    tracked: bool,
}

/// Tape of differentiable operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar output with respect to the tracked leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `leaf`; fails if `leaf` was not created with [`Graph::leaf`].
    pub fn get(&self, leaf: Var) -> Result<&Tensor<T>> {
        self.grads.get(&leaf).ok_or(Error::UntrackedLeaf(leaf.0))
    }

    pub fn take(&mut self, leaf: Var) -> Result<Tensor<T>> {
        self.grads.remove(&leaf).ok_or(Error::UntrackedLeaf(leaf.0))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf whose gradient will be reported by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Adds a leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(value, op, needs_grad, false)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn conv2d(&mut self, x: Var, k: Var, pad: PadSpec, stride: usize) -> Result<Var> {
        let geom = ops::conv_geom(self.value(x).shape(), self.value(k).shape(), pad, stride)?;
        let out = ops::conv2d(self.value(x), self.value(k), pad, stride)?;
        Ok(self.push(out, Op::Conv2d { x, k, geom }, &[x, k]))
    }

    pub fn zero_pad(&mut self, x: Var, pad: PadSpec) -> Result<Var> {
        let dims = bhwc("zero_pad", self.value(x).shape())?;
        let out = ops::zero_pad(self.value(x), pad)?;
        Ok(self.push(out, Op::ZeroPad { x, pad, dims }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2_with_argmax(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, &[x]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let dims = bhwc("upsample_nn", self.value(x).shape())?;
        let out = ops::upsample_nn(self.value(x))?;
        Ok(self.push(out, Op::Upsample2 { x, dims }, &[x]))
    }

    /// Concatenation along the last axis, `a` first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat(self.value(a), self.value(b))?;
        let ca = *self.value(a).shape().last().unwrap();
        let cb = *self.value(b).shape().last().unwrap();
        Ok(self.push(out, Op::Concat { a, b, ca, cb }, &[a, b]))
    }

    /// Entries `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xs = self.value(x);
        let c = *xs.shape().last().unwrap_or(&0);
        if start > end || end > c {
            return Err(Error::shape("slice_last", format!("range within 0..{c}"), format!("{start}..{end}")));
        }
        let (_, tail) = ops::split_last(xs, start)?;
        let (mid, _) = ops::split_last(&tail, end - start)?;
        Ok(self.push(mid, Op::SliceLast { x, start, end, c }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).scale(c);
        self.push(out, Op::Scale { x, c }, &[x])
    }

    /// Adds `b` along the last axis; a one-element `b` is broadcast everywhere.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = *self.value(x).shape().last().unwrap_or(&1);
        let bl = self.value(b).len();
        if bl != c && bl != 1 {
            return Err(Error::shape("channel_bias", format!("{c} or 1 entries"), bl));
        }
        let out = ops::channel_affine(self.value(x), None, Some(self.value(b).data()));
        Ok(self.push(out, Op::ChannelBias { x, b }, &[x, b]))
    }

    /// Multiplies each channel (last axis) by the matching entry of `g`: the
    /// diagonal operator `diag(g)`.
    pub fn channel_scale(&mut self, x: Var, g: Var) -> Result<Var> {
        let c = *self.value(x).shape().last().unwrap_or(&1);
        if self.value(g).len() != c {
            return Err(Error::shape("channel_scale", c, self.value(g).len()));
        }
        let out = ops::channel_affine(self.value(x), Some(self.value(g).data()), None);
        Ok(self.push(out, Op::ChannelScale { x, g }, &[x, g]))
    }

    /// `x * scale + shift` per channel with constant coefficients.
    pub fn channel_affine_const(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let c = *self.value(x).shape().last().unwrap_or(&1);
        if scale.len() != c || shift.len() != c {
            return Err(Error::shape("channel_affine_const", c, scale.len()));
        }
        let out = ops::channel_affine(self.value(x), Some(scale), Some(shift));
        Ok(self.push(out, Op::ChannelScaleConst { x, scale: scale.to_vec() }, &[x]))
    }

    /// Normalizes each channel with the statistics of the whole tensor
    /// (every axis but the last): training-mode batch normalization without
    /// the learned scale and shift.
    pub fn batch_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        let (mean, var) = ops::channel_stats(self.value(x))?;
        let out = ops::normalize_with(self.value(x), mean.data(), var.data(), eps)?;
        let inv_std = var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xhat = out.data().to_vec();
        Ok(self.push(out, Op::BatchNormalize { x, xhat, inv_std }, &[x]))
    }

    /// Row-wise product `x w` for `x: [rows, din]`, `w: [din, dout]`.
    pub fn dense(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (&din, lead) = xs.split_last().ok_or_else(|| Error::shape("dense", "rank >= 1", "rank 0"))?;
        if ws.len() != 2 || ws[0] != din {
            return Err(Error::shape("dense", format!("weight [{din}, _]"), format!("{ws:?}")));
        }
        let dout = ws[1];
        let rows: usize = lead.iter().product();
        let out = dense_forward(self.value(x).data(), self.value(w).data(), rows, din, dout);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = dout;
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::Dense { x, w, rows, din, dout }, &[x, w]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).norm_sq());
        self.push(out, Op::SumSquares { x }, &[x])
    }

    /// `sum |x_i|^p` per sample (leading axis); output shape `[batch, 1]`.
    pub fn pow_abs_sum(&mut self, x: Var, p: T) -> Result<Var> {
        let xs = self.value(x);
        let batch = *xs.shape().first().ok_or_else(|| Error::shape("pow_abs_sum", "rank >= 1", "rank 0"))?;
        let per = if batch == 0 { 0 } else { xs.len() / batch };
        let out: Vec<T> = (0..batch)
            .map(|b| xs.data()[b * per..(b + 1) * per].iter().map(|v| v.abs().powf(p)).sum())
            .collect();
        let out = Tensor::new(&[batch, 1], out)?;
        Ok(self.push(out, Op::PowAbsSum { x, p, batch }, &[x]))
    }

    /// `<x, w>` for a constant weight tensor.
    pub fn dot_const(&mut self, x: Var, w: &Tensor<T>) -> Result<Var> {
        let s = self.value(x).dot(w)?;
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x, w: w.data().to_vec() }, &[x]))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward", "scalar output", format!("{:?}", self.value(output).shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
        }
        let mut out = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.tracked {
                let g = match grads[i].take() {
                    Some(g) => Tensor::new(node.value.shape(), g)?,
                    None => Tensor::zeros(node.value.shape()),
                };
                out.insert(Var(i), g);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, geom } => {
                if self.needs(*x) {
                    let d = ops::conv2d_grad_input(geom, self.value(*k).data(), g);
                    accumulate(grads, *x, d);
                }
                if self.needs(*k) {
                    let d = ops::conv2d_grad_kernel(geom, self.value(*x).data(), g);
                    accumulate(grads, *k, d);
                }
            }
            Op::ZeroPad { x, pad, dims } => {
                let [b, h, w, c] = *dims;
                accumulate(grads, *x, ops::crop(g, b, h, w, c, *pad));
            }
            Op::Relu { x } => {
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut d = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    d[src] += gv;
                }
                accumulate(grads, *x, d);
            }
            Op::Upsample2 { x, dims } => {
                let [b, h, w, c] = *dims;
                accumulate(grads, *x, ops::upsample_nn_adjoint(g, b, h, w, c));
            }
            Op::Concat { a, b, ca, cb } => {
                let c = ca + cb;
                let rows = g.len() / c.max(1);
                if self.needs(*a) {
                    let mut d = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * c..r * c + ca]);
                    }
                    accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let mut d = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * c + ca..(r + 1) * c]);
                    }
                    accumulate(grads, *b, d);
                }
            }
            Op::SliceLast { x, start, end, c } => {
                let w = end - start;
                let rows = self.value(*x).len() / (*c).max(1);
                let mut d = vec![T::zero(); self.value(*x).len()];
                for r in 0..rows {
                    d[r * c + start..r * c + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                accumulate(grads, *x, d);
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Scale { x, c } => accumulate(grads, *x, g.iter().map(|&v| v * *c).collect()),
            Op::ChannelBias { x, b } => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if self.needs(*b) {
                    let c = *self.value(*x).shape().last().unwrap_or(&1);
                    let bl = self.value(*b).len();
                    let mut d = vec![T::zero(); bl];
                    for row in g.chunks_exact(c) {
                        if bl == 1 {
                            d[0] += row.iter().copied().sum();
                        } else {
                            d.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                    }
                    accumulate(grads, *b, d);
                }
            }
            Op::ChannelScale { x, g: gamma } => {
                let c = self.value(*gamma).len();
                if self.needs(*x) {
                    let gv = self.value(*gamma).data();
                    let mut d = g.to_vec();
                    for row in d.chunks_exact_mut(c) {
                        row.iter_mut().zip(gv).for_each(|(a, &s)| *a *= s);
                    }
                    accumulate(grads, *x, d);
                }
                if self.needs(*gamma) {
                    let mut d = vec![T::zero(); c];
                    for (row, xr) in g.chunks_exact(c).zip(self.value(*x).data().chunks_exact(c)) {
                        for ((a, &gv), &xv) in d.iter_mut().zip(row).zip(xr) {
                            *a += gv * xv;
                        }
                    }
                    accumulate(grads, *gamma, d);
                }
            }
            Op::ChannelScaleConst { x, scale } => {
                let c = scale.len();
                let mut d = g.to_vec();
                for row in d.chunks_exact_mut(c) {
                    row.iter_mut().zip(scale).for_each(|(a, &s)| *a *= s);
                }
                accumulate(grads, *x, d);
            }
            Op::BatchNormalize { x, xhat, inv_std } => {
                let c = inv_std.len();
                let n = T::from_usize_lossy(g.len() / c);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (row, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        sum_g[ch] += row[ch];
                        sum_gx[ch] += row[ch] * xr[ch];
                    }
                }
                let mut d = vec![T::zero(); g.len()];
                for ((drow, row), xr) in d.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        drow[ch] = inv_std[ch] * (row[ch] - (sum_g[ch] + xr[ch] * sum_gx[ch]) / n);
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::Dense { x, w, rows, din, dout } => {
                let (rows, din, dout) = (*rows, *din, *dout);
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    let mut d = vec![T::zero(); rows * din];
                    for r in 0..rows {
                        let gr = &g[r * dout..(r + 1) * dout];
                        for i in 0..din {
                            let wr = &wv[i * dout..(i + 1) * dout];
                            d[r * din + i] = gr.iter().zip(wr).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    accumulate(grads, *x, d);
                }
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    let mut d = vec![T::zero(); din * dout];
                    for r in 0..rows {
                        let gr = &g[r * dout..(r + 1) * dout];
                        for i in 0..din {
                            let xi = xv[r * din + i];
                            d[i * dout..(i + 1) * dout].iter_mut().zip(gr).for_each(|(a, &gv)| *a += xi * gv);
                        }
                    }
                    accumulate(grads, *w, d);
                }
            }
            Op::Reshape { x } => accumulate(grads, *x, g.to_vec()),
            Op::Sum { x } => accumulate(grads, *x, vec![g[0]; self.value(*x).len()]),
            Op::SumSquares { x } => {
                let two = T::lit(2.0) * g[0];
                accumulate(grads, *x, self.value(*x).data().iter().map(|&v| two * v).collect());
            }
            Op::PowAbsSum { x, p, batch } => {
                let xv = self.value(*x).data();
                let per = if *batch == 0 { 0 } else { xv.len() / batch };
                let mut d = Vec::with_capacity(xv.len());
                for (i, &v) in xv.iter().enumerate() {
                    let gb = g[i / per.max(1)];
                    let a = v.abs();
                    // d|v|^p/dv = p |v|^(p-1) sign(v); sign(0) = 0
                    let deriv = if a == T::zero() { T::zero() } else { *p * a.powf(*p - T::one()) * v.signum() };
                    d.push(gb * deriv);
                }
                accumulate(grads, *x, d);
            }
            Op::DotConst { x, w } => accumulate(grads, *x, w.iter().map(|&v| v * g[0]).collect()),
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn dense_forward<T: Scalar>(x: &[T], w: &[T], rows: usize, din: usize, dout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * dout];
    for r in 0..rows {
        let acc = &mut out[r * dout..(r + 1) * dout];
        for i in 0..din {
            let xi = x[r * din + i];
            acc.iter_mut().zip(&w[i * dout..(i + 1) * dout]).for_each(|(a, &wv)| *a += xi * wv);
        }
    }
    out
}
