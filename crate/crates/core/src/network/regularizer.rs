use super::exec::{forward, forward_on_graph, is_finalized, Mode, Tracking};
use super::params::ParamSet;
use super::spec::{concat_shape, Activation, Bias, LayerSpec, Linear, NetworkSpec};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `R(x) = a |x|_p^p + |Phi(x)|_q^q` for a convex network `Phi` with
/// nonnegative output, stored as `Phi` followed by one terminal layer that
/// reads the concatenation of the input and `Phi(x)` through the identity.
#[derive(Clone, Debug)]
pub struct Regularizer<T> {
    spec: NetworkSpec,
    params: ParamSet<T>,
    a: f64,
    p: f64,
    q: f64,
}

/// Builds the regularizer from a convex network with frozen batch statistics.
pub fn make_uniformly_convex<T: Scalar>(net: &NetworkSpec, params: &ParamSet<T>, a: f64, p: f64, q: f64) -> Result<Regularizer<T>> {
    const OP: &str = "make_uniformly_convex";
    if !(p >= 2.0) {
        return Err(Error::invalid(OP, format!("p = {p}; need p >= 2 for a uniformly convex data term")));
    }
    if !(q >= 1.0) {
        return Err(Error::invalid(OP, format!("q = {q}; need q >= 1 for a convex nondecreasing outer map")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(OP, format!("a = {a}; need a positive finite constant")));
    }
    let out = net.output_shape()?;
    if concat_shape(&net.input_shape, &out).is_none() {
        return Err(Error::shape(OP, format!("network output concatenable with input {:?}", net.input_shape), format!("{out:?}")));
    }
    if let Some(&(k, _)) = net
        .bn_layers()?
        .iter()
        .find(|(k, _)| !params.contains(&format!("L{k}.bn_mean")) || !params.contains(&format!("L{k}.bn_var")))
    {
        return Err(Error::BnNotFinalized { layer: k });
    }
    let mut spec = net.clone();
    let split = *net.input_shape.last().unwrap();
    spec.layers.push(LayerSpec::new(Linear::Identity, Bias::None, Activation::Terminal { a, p, q, split }).with_concat(1));
    spec.shapes()?;
    Ok(Regularizer {
        spec,
        params: params.clone(),
        a,
        p,
        q,
    })
}

impl<T: Scalar> Regularizer<T> {
    /// Network including the terminal layer.
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Per-sample input shape, e.g. `[h, w, 1]`.
    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.p, self.q)
    }

    /// Convex network without the terminal layer.
    pub fn convex_part(&self) -> NetworkSpec {
        let mut s = self.spec.clone();
        s.layers.pop();
        s
    }

    fn batched(&self, x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
        let mut shape = vec![n];
        shape.extend_from_slice(&self.spec.input_shape);
        x.reshaped(&shape)
    }

    /// `R(x)`; `x` may have any shape with the right number of entries.
    pub fn value(&self, x: &Tensor<T>) -> Result<T> {
        forward(&self.spec, &self.params, &self.batched(x, 1)?, Mode::Infer)?.item()
    }

    /// `R` on several points in one batched pass.
    pub fn values(&self, xs: &[Tensor<T>]) -> Result<Vec<T>> {
        let mut data = Vec::new();
        for x in xs {
            data.extend_from_slice(x.data());
        }
        let n = xs.len();
        let batch = self.batched(&Tensor::new(&[data.len()], data)?, n)?;
        Ok(forward(&self.spec, &self.params, &batch, Mode::Infer)?.into_data())
    }

    /// `R(x)` and the subgradient element returned by reverse mode (ReLU
    /// derivative 0 at the kink), shaped like `x`.
    pub fn value_and_grad(&self, x: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        let mut g = Graph::new();
        let xv = g.leaf(self.batched(x, 1)?);
        let (out, _) = forward_on_graph(&self.spec, &self.params, &mut g, xv, Mode::Infer, Tracking::Constant)?;
        let value = g.value(out).item()?;
        let mut grads = g.backward(out)?;
        Ok((value, grads.take(xv)?.reshape(x.shape())?))
    }

    pub fn is_finalized(&self) -> Result<bool> {
        is_finalized(&self.spec, &self.params)
    }
}
