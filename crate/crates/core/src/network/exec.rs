use std::collections::BTreeMap;

use super::params::{Param, ParamSet};
use super::spec::{param_id, Activation, Bias, Linear, NetworkSpec};
use crate::autodiff::{dense_forward, Graph, Var};
use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{PadSpec, Tensor};

/// Batch-normalization behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the frozen population statistics.
    Infer,
}

/// Which parameters become tracked leaves when evaluating on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tracking {
    /// All parameters are constants (gradients with respect to the input only).
    Constant,
    /// Free parameters are tracked; frozen ones are constants.
    Free,
}

/// Per-channel statistics seen by a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRecord<T> {
    pub layer: usize,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

pub(crate) trait Backend<T: Scalar> {
    fn param(&mut self, id: &str, p: &Param<T>) -> Var;
    fn value(&self, v: Var) -> &Tensor<T>;
    fn release(&mut self, v: Var);
    fn conv2d(&mut self, x: Var, k: Var, pad: PadSpec, stride: usize) -> Result<Var>;
    fn upsample2(&mut self, x: Var) -> Result<Var>;
    fn relu(&mut self, x: Var) -> Result<Var>;
    fn maxpool2(&mut self, x: Var) -> Result<Var>;
    fn concat(&mut self, a: Var, b: Var) -> Result<Var>;
    fn add(&mut self, a: Var, b: Var) -> Result<Var>;
    fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var>;
    fn channel_scale(&mut self, x: Var, g: Var) -> Result<Var>;
    fn affine_const(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var>;
    fn batch_normalize(&mut self, x: Var, eps: T) -> Result<Var>;
    fn dense(&mut self, x: Var, w: Var) -> Result<Var>;
    fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var>;
    fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var>;
    fn pow_abs_sum(&mut self, x: Var, p: T) -> Result<Var>;
    fn scale(&mut self, x: Var, c: T) -> Result<Var>;
}

/// Untaped evaluation that drops feature maps once nothing reads them.
pub(crate) struct Arena<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Arena<T> {
    pub(crate) fn new() -> Self {
        Self { slots: Vec::new() }
    }

    pub(crate) fn put(&mut self, t: Tensor<T>) -> Var {
        self.slots.push(Some(t));
        Var(self.slots.len() - 1)
    }

    pub(crate) fn take(&mut self, v: Var) -> Tensor<T> {
        self.slots[v.0].take().expect("arena slot already released")
    }

    fn unary(&mut self, x: Var, f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Var> {
        let out = f(self.value(x))?;
        Ok(self.put(out))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>) -> Result<Var> {
        let out = f(self.value(a), self.value(b))?;
        Ok(self.put(out))
    }
}

impl<T: Scalar> Backend<T> for Arena<T> {
    fn param(&mut self, _id: &str, p: &Param<T>) -> Var {
        self.put(p.tensor.clone())
    }

    fn value(&self, v: Var) -> &Tensor<T> {
        self.slots[v.0].as_ref().expect("arena slot already released")
    }

    fn release(&mut self, v: Var) {
        self.slots[v.0] = None;
    }

    fn conv2d(&mut self, x: Var, k: Var, pad: PadSpec, stride: usize) -> Result<Var> {
        self.binary(x, k, |x, k| ops::conv2d(x, k, pad, stride))
    }

    fn upsample2(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::upsample_nn)
    }

    fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |x| Ok(ops::relu(x)))
    }

    fn maxpool2(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::maxpool2)
    }

    fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, ops::concat)
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |a, b| a.add(b))
    }

    fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.binary(x, b, |x, b| Ok(ops::channel_affine(x, None, Some(b.data()))))
    }

    fn channel_scale(&mut self, x: Var, g: Var) -> Result<Var> {
        self.binary(x, g, |x, g| Ok(ops::channel_affine(x, Some(g.data()), None)))
    }

    fn affine_const(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        self.unary(x, |x| Ok(ops::channel_affine(x, Some(scale), Some(shift))))
    }

    fn batch_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        self.unary(x, |x| {
            let (m, v) = ops::channel_stats(x)?;
            ops::normalize_with(x, m.data(), v.data(), eps)
        })
    }

    fn dense(&mut self, x: Var, w: Var) -> Result<Var> {
        self.binary(x, w, |x, w| {
            let (rows, din) = (x.shape()[0], x.shape()[1]);
            let dout = w.shape()[1];
            Tensor::new(&[rows, dout], dense_forward(x.data(), w.data(), rows, din, dout))
        })
    }

    fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.unary(x, |x| x.reshaped(shape))
    }

    fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.unary(x, |x| {
            let (_, tail) = ops::split_last(x, start)?;
            Ok(ops::split_last(&tail, end - start)?.0)
        })
    }

    fn pow_abs_sum(&mut self, x: Var, p: T) -> Result<Var> {
        self.unary(x, |x| {
            let b = x.shape()[0];
            let per = if b == 0 { 0 } else { x.len() / b };
            let sums = (0..b).map(|i| x.data()[i * per..(i + 1) * per].iter().map(|v| v.abs().powf(p)).sum()).collect();
            Tensor::new(&[b, 1], sums)
        })
    }

    fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, |x| Ok(x.scale(c)))
    }
}

/// [`Graph`] adaptor binding parameter ids to leaves.
pub(crate) struct Tape<'g, T> {
    pub(crate) graph: &'g mut Graph<T>,
    pub(crate) tracking: Tracking,
    pub(crate) bound: BTreeMap<String, Var>,
}

impl<T: Scalar> Backend<T> for Tape<'_, T> {
    fn param(&mut self, id: &str, p: &Param<T>) -> Var {
        if let Some(&v) = self.bound.get(id) {
            return v;
        }
        let v = if self.tracking == Tracking::Free && !p.frozen {
            self.graph.leaf(p.tensor.clone())
        } else {
            self.graph.constant(p.tensor.clone())
        };
        self.bound.insert(id.to_string(), v);
        v
    }
    fn value(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }
    fn release(&mut self, _v: Var) {}
    fn conv2d(&mut self, x: Var, k: Var, pad: PadSpec, stride: usize) -> Result<Var> {
        self.graph.conv2d(x, k, pad, stride)
    }
    fn upsample2(&mut self, x: Var) -> Result<Var> {
        self.graph.upsample2(x)
    }
    fn relu(&mut self, x: Var) -> Result<Var> {
        Ok(self.graph.relu(x))
    }
    fn maxpool2(&mut self, x: Var) -> Result<Var> {
        self.graph.maxpool2(x)
    }
    fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.graph.concat(a, b)
    }
    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.graph.add(a, b)
    }
    fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.graph.channel_bias(x, b)
    }
    fn channel_scale(&mut self, x: Var, g: Var) -> Result<Var> {
        self.graph.channel_scale(x, g)
    }
    fn affine_const(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        self.graph.channel_affine_const(x, scale, shift)
    }
    fn batch_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        self.graph.batch_normalize(x, eps)
    }
    fn dense(&mut self, x: Var, w: Var) -> Result<Var> {
        self.graph.dense(x, w)
    }
    fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.graph.reshape(x, shape)
    }
    fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.graph.slice_last(x, start, end)
    }
    fn pow_abs_sum(&mut self, x: Var, p: T) -> Result<Var> {
        self.graph.pow_abs_sum(x, p)
    }
    fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        Ok(self.graph.scale(x, c))
    }
}

fn check_input<T: Scalar>(spec: &NetworkSpec, x: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    if s.is_empty() || s[1..] != spec.input_shape[..] {
        return Err(Error::shape("forward", format!("[batch, {:?}]", spec.input_shape), format!("{s:?}")));
    }
    Ok(())
}

/// Evaluates `spec` on the batch `x` (`[batch, ...input_shape]`).
pub fn forward<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    check_input(spec, x)?;
    let mut arena = Arena::new();
    let xv = arena.put(x.clone());
    let out = run(spec, params, &mut arena, xv, mode, None)?;
    Ok(arena.take(out))
}

/// Training-mode pass over `x` as one batch, returning the statistics seen by
/// every batch-normalization layer.
pub fn batch_statistics<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Vec<BnRecord<T>>> {
    check_input(spec, x)?;
    let mut arena = Arena::new();
    let xv = arena.put(x.clone());
    let mut stats = Vec::new();
    run(spec, params, &mut arena, xv, Mode::Train, Some(&mut stats))?;
    Ok(stats)
}

/// Freezes population statistics computed from `population` (one batch)
/// into `params` as `L{k}.bn_mean` / `L{k}.bn_var`.
pub fn finalize_bn<T: Scalar>(spec: &NetworkSpec, params: &mut ParamSet<T>, population: &Tensor<T>) -> Result<()> {
    for rec in batch_statistics(spec, params, population)? {
        params.insert(param_id(rec.layer, "bn_mean"), rec.mean, true);
        params.insert(param_id(rec.layer, "bn_var"), rec.var, true);
    }
    Ok(())
}

/// Whether every batch-normalization layer has frozen statistics.
pub fn is_finalized<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>) -> Result<bool> {
    Ok(spec
        .bn_layers()?
        .iter()
        .all(|&(k, _)| params.contains(&param_id(k, "bn_mean")) && params.contains(&param_id(k, "bn_var"))))
}

/// Records the forward pass of `x` on `graph`. Returns the output node and
/// the leaves bound to each parameter id.
pub fn forward_on_graph<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    graph: &mut Graph<T>,
    x: Var,
    mode: Mode,
    tracking: Tracking,
) -> Result<(Var, BTreeMap<String, Var>)> {
    check_input(spec, graph.value(x))?;
    let mut tape = Tape {
        graph,
        tracking,
        bound: BTreeMap::new(),
    };
    let out = run(spec, params, &mut tape, x, mode, None)?;
    Ok((out, tape.bound))
}

/// Shared layer evaluation for both backends.
pub(crate) fn run<T: Scalar, B: Backend<T>>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    be: &mut B,
    x: Var,
    mode: Mode,
    mut stats: Option<&mut Vec<BnRecord<T>>>,
) -> Result<Var> {
    let depth = spec.layers.len();
    spec.shapes()?;
    let batch = be.value(x).shape()[0];
    // last layer reading each feature map z^1..z^{L+1}
    let mut last_use = vec![0usize; depth + 1];
    for (li, l) in spec.layers.iter().enumerate() {
        let k = li + 1;
        last_use[li] = k;
        if let Some(i) = l.concat_from {
            last_use[i - 1] = last_use[i - 1].max(k);
        }
        if let Some(s) = &l.skip {
            last_use[s.from - 1] = last_use[s.from - 1].max(k);
        }
    }
    let mut z: Vec<Option<Var>> = vec![None; depth + 1];
    z[0] = Some(x);
    let is_z = |z: &[Option<Var>], v: Var| z.contains(&Some(v));

    for (li, layer) in spec.layers.iter().enumerate() {
        let k = li + 1;
        let zk = z[li].expect("feature map released early");
        let input = match layer.concat_from {
            Some(i) => be.concat(z[i - 1].expect("feature map released early"), zk)?,
            None => zk,
        };
        let mut pre = apply_linear(be, params, &layer.weight, k, "W", input, batch)?;
        if input != pre && !is_z(&z, input) {
            be.release(input);
        }
        if let Some(skip) = &layer.skip {
            let src = z[skip.from - 1].expect("feature map released early");
            let s = apply_linear(be, params, &skip.op, k, "A", src, batch)?;
            let sum = be.add(pre, s)?;
            for t in [pre, s] {
                if !is_z(&z, t) {
                    be.release(t);
                }
            }
            pre = sum;
        }
        if layer.bias != Bias::None {
            let b = be.param(&param_id(k, "b"), params.get(&param_id(k, "b"))?);
            let next = be.channel_bias(pre, b)?;
            be.release(b);
            if !is_z(&z, pre) {
                be.release(pre);
            }
            pre = next;
        }
        let out = match layer.activation {
            Activation::Identity => pre,
            Activation::Relu => be.relu(pre)?,
            Activation::MaxPool2 => be.maxpool2(pre)?,
            Activation::BatchNorm { eps } => {
                let eps = T::lit(eps);
                match mode {
                    Mode::Train => {
                        if let Some(stats) = stats.as_deref_mut() {
                            let (mean, var) = ops::channel_stats(be.value(pre))?;
                            stats.push(BnRecord { layer: k, mean, var });
                        }
                        be.batch_normalize(pre, eps)?
                    }
                    Mode::Infer => {
                        let (Ok(mean), Ok(var)) = (params.tensor(&param_id(k, "bn_mean")), params.tensor(&param_id(k, "bn_var"))) else {
                            return Err(Error::BnNotFinalized { layer: k });
                        };
                        let scale: Vec<T> = var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                        let shift: Vec<T> = mean.data().iter().zip(&scale).map(|(&m, &s)| -m * s).collect();
                        be.affine_const(pre, &scale, &shift)?
                    }
                }
            }
            Activation::Terminal { a, p, q, split } => {
                let c = *be.value(pre).shape().last().unwrap();
                let head = be.slice_last(pre, 0, split)?;
                let f = be.pow_abs_sum(head, T::lit(p))?;
                let f = be.scale(f, T::lit(a))?;
                let tail = be.slice_last(pre, split, c)?;
                let g = be.pow_abs_sum(tail, T::lit(q))?;
                be.add(f, g)?
            }
        };
        if out != pre && !is_z(&z, pre) {
            be.release(pre);
        }
        z[k] = Some(out);
        for i in 0..k {
            if last_use[i] == k {
                if let Some(v) = z[i].take() {
                    if i > 0 && !z.contains(&Some(v)) {
                        be.release(v);
                    }
                }
            }
        }
    }
    Ok(z[depth].expect("network output"))
}

fn apply_linear<T: Scalar, B: Backend<T>>(
    be: &mut B,
    params: &ParamSet<T>,
    op: &Linear,
    k: usize,
    suffix: &str,
    x: Var,
    batch: usize,
) -> Result<Var> {
    let id = param_id(k, suffix);
    Ok(match *op {
        Linear::Identity => x,
        Linear::Conv { pad, stride, .. } => {
            let w = be.param(&id, params.get(&id)?);
            let out = be.conv2d(x, w, pad, stride)?;
            be.release(w);
            out
        }
        Linear::UpConv { pad, .. } => {
            let w = be.param(&id, params.get(&id)?);
            let up = be.upsample2(x)?;
            let out = be.conv2d(up, w, pad, 1)?;
            be.release(up);
            be.release(w);
            out
        }
        Linear::Dense { din, .. } => {
            let w = be.param(&id, params.get(&id)?);
            let flat = if be.value(x).rank() == 2 { x } else { be.reshape(x, &[batch, din])? };
            let out = be.dense(flat, w)?;
            if flat != x {
                be.release(flat);
            }
            be.release(w);
            out
        }
        Linear::Diagonal { .. } => {
            let w = be.param(&id, params.get(&id)?);
            let out = be.channel_scale(x, w)?;
            be.release(w);
            out
        }
    })
}
