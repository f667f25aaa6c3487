use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::PadSpec;

/// Linear operator applied to the (possibly concatenated) layer input.
#[derive(Clone, Debug, PartialEq)]
pub enum Linear {
    /// Fixed identity; carries no parameter.
    Identity,
    Conv {
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        pad: PadSpec,
        stride: usize,
    },
    /// Nearest-neighbour 2x enlargement (a fixed 0/1 matrix) followed by a
    /// stride-1 convolution.
    UpConv {
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        pad: PadSpec,
    },
    /// Fully connected map on the flattened sample.
    Dense { din: usize, dout: usize },
    /// Per-channel scaling `diag(w)`.
    Diagonal { channels: usize },
}

impl Linear {
    /// Shape of the trainable tensor, if any.
    pub fn param_shape(&self) -> Option<Vec<usize>> {
        match *self {
            Linear::Identity => None,
            Linear::Conv { kh, kw, cin, cout, .. } | Linear::UpConv { kh, kw, cin, cout, .. } => {
                Some(vec![kh, kw, cin, cout])
            }
            Linear::Dense { din, dout } => Some(vec![din, dout]),
            Linear::Diagonal { channels } => Some(vec![channels]),
        }
    }

    /// Number of inputs feeding each output entry, used for initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            Linear::Identity | Linear::Diagonal { .. } => 1,
            Linear::Conv { kh, kw, cin, .. } | Linear::UpConv { kh, kw, cin, .. } => kh * kw * cin,
            Linear::Dense { din, .. } => din,
        }
    }

    pub(crate) fn out_shape(&self, op: &'static str, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Linear::Identity => Ok(input.to_vec()),
            Linear::Conv { kh, kw, cin, cout, pad, stride } => {
                let [h, w, c] = image(op, input)?;
                if c != cin {
                    return Err(Error::shape(op, format!("{cin} input channels"), c));
                }
                conv_out(op, h, w, kh, kw, pad, stride).map(|(ho, wo)| vec![ho, wo, cout])
            }
            Linear::UpConv { kh, kw, cin, cout, pad } => {
                let [h, w, c] = image(op, input)?;
                if c != cin {
                    return Err(Error::shape(op, format!("{cin} input channels"), c));
                }
                conv_out(op, 2 * h, 2 * w, kh, kw, pad, 1).map(|(ho, wo)| vec![ho, wo, cout])
            }
            Linear::Dense { din, dout } => {
                let n: usize = input.iter().product();
                if n != din {
                    return Err(Error::shape(op, format!("{din} inputs"), n));
                }
                Ok(vec![dout])
            }
            Linear::Diagonal { channels } => {
                if input.last() != Some(&channels) {
                    return Err(Error::shape(op, format!("{channels} channels"), format!("{input:?}")));
                }
                Ok(input.to_vec())
            }
        }
    }
}

fn image(op: &'static str, s: &[usize]) -> Result<[usize; 3]> {
    match *s {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::shape(op, "image feature map [h, w, c]", format!("{s:?}"))),
    }
}

fn conv_out(op: &'static str, h: usize, w: usize, kh: usize, kw: usize, pad: PadSpec, stride: usize) -> Result<(usize, usize)> {
    let (hp, wp) = (h + pad.rows(), w + pad.cols());
    if stride == 0 || hp < kh || wp < kw || (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
        return Err(Error::shape(op, format!("valid {kh}x{kw}/{stride} convolution"), format!("padded {hp}x{wp}")));
    }
    Ok(((hp - kh) / stride + 1, (wp - kw) / stride + 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bias {
    None,
    /// One value per channel (last axis).
    PerChannel(usize),
    /// A single value added to every entry.
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    MaxPool2,
    /// Batch normalization without the learned scale and shift:
    /// `(u - E) / sqrt(Var + eps)` per channel. Batch statistics in training
    /// mode, frozen population statistics in inference mode.
    BatchNorm { eps: f64 },
    /// `a * sum |u_c|^p` over channels `c < split` plus `sum |u_c|^q` over the
    /// rest, one scalar per sample.
    Terminal { a: f64, p: f64, q: f64, split: usize },
}

impl Activation {
    /// Whether the activation is convex and monotone nondecreasing in each
    /// component. Batch normalization qualifies once its statistics are
    /// frozen (a positive per-channel scaling plus a shift).
    pub fn is_convex_monotone(&self) -> bool {
        !matches!(self, Activation::Terminal { .. })
    }
}

/// Extra linear link from an earlier feature map into the pre-activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Skip {
    /// Feature-map index `j` (1-based; `z^1` is the network input).
    pub from: usize,
    pub op: Linear,
}

/// One layer `z^{k+1} = act(W zhat^k + A z^j + b)` where `zhat^k` is either
/// `z^k` or the channel concatenation of `z^i` and `z^k` (in that order).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub weight: Linear,
    pub bias: Bias,
    pub activation: Activation,
    pub concat_from: Option<usize>,
    pub skip: Option<Skip>,
}

impl LayerSpec {
    pub fn new(weight: Linear, bias: Bias, activation: Activation) -> Self {
        Self {
            weight,
            bias,
            activation,
            concat_from: None,
            skip: None,
        }
    }

    pub fn with_concat(mut self, from: usize) -> Self {
        self.concat_from = Some(from);
        self
    }

    pub fn with_skip(mut self, from: usize, op: Linear) -> Self {
        self.skip = Some(Skip { from, op });
        self
    }
}

/// Parameter id of layer `k` (1-based) with suffix `W`, `b`, `A`, `bn_mean`
/// or `bn_var`.
pub fn param_id(k: usize, suffix: &str) -> String {
    format!("L{k}.{suffix}")
}

/// Layered network. Per-sample shapes exclude the batch axis: `[h, w, c]`
/// for feature maps, `[d]` for flat vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { input_shape, layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Per-sample shapes of `z^1, ..., z^{L+1}`, validating every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        const OP: &str = "network";
        let mut z = vec![self.input_shape.clone()];
        for (li, layer) in self.layers.iter().enumerate() {
            let k = li + 1;
            let mut input = z[li].clone();
            if let Some(i) = layer.concat_from {
                if i == 0 || i > k {
                    return Err(Error::invalid(OP, format!("layer {k} concatenates z^{i}; must be in 1..={k}")));
                }
                input = concat_shape(&z[i - 1], &input)
                    .ok_or_else(|| Error::shape(OP, format!("layer {k}: concat partner like {:?}", z[i - 1]), format!("{input:?}")))?;
            }
            let mut pre = layer.weight.out_shape(OP, &input)?;
            if let Some(skip) = &layer.skip {
                if skip.from == 0 || skip.from > k {
                    return Err(Error::invalid(OP, format!("layer {k} skip from z^{}; must be in 1..={k}", skip.from)));
                }
                let s = skip.op.out_shape(OP, &z[skip.from - 1])?;
                if s != pre {
                    return Err(Error::shape(OP, format!("layer {k} skip output {pre:?}"), format!("{s:?}")));
                }
            }
            let c = *pre.last().unwrap_or(&0);
            match layer.bias {
                Bias::PerChannel(n) if n != c => {
                    return Err(Error::shape(OP, format!("layer {k} bias of length {c}"), n));
                }
                _ => {}
            }
            pre = match layer.activation {
                Activation::MaxPool2 => {
                    let [h, w, c] = image(OP, &pre)?;
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::shape(OP, format!("layer {k}: even spatial dims for max-pool"), format!("{h}x{w}")));
                    }
                    vec![h / 2, w / 2, c]
                }
                Activation::Terminal { split, p, q, .. } => {
                    if li + 1 != self.layers.len() {
                        return Err(Error::invalid(OP, format!("terminal activation in non-final layer {k}")));
                    }
                    if split > c || !(p > 0.0) || !(q > 0.0) {
                        return Err(Error::invalid(OP, format!("layer {k}: bad terminal split {split} / exponents {p}, {q}")));
                    }
                    vec![1]
                }
                _ => pre,
            };
            z.push(pre);
        }
        Ok(z)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().unwrap())
    }

    /// `(id, shape)` of every trainable tensor, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let k = li + 1;
            if let Some(s) = layer.weight.param_shape() {
                out.push((param_id(k, "W"), s));
            }
            if let Some(s) = layer.skip.as_ref().and_then(|s| s.op.param_shape()) {
                out.push((param_id(k, "A"), s));
            }
            match layer.bias {
                Bias::None => {}
                Bias::PerChannel(c) => out.push((param_id(k, "b"), vec![c])),
                Bias::Scalar => out.push((param_id(k, "b"), vec![1])),
            }
        }
        out
    }

    /// Layers (1-based) using batch normalization, with their channel count.
    pub fn bn_layers(&self) -> Result<Vec<(usize, usize)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.activation, Activation::BatchNorm { .. }))
            .map(|(li, _)| (li + 1, *shapes[li + 1].last().unwrap()))
            .collect())
    }
}

pub(crate) fn concat_shape(z: &[usize], x: &[usize]) -> Option<Vec<usize>> {
    if z.len() != x.len() || z.is_empty() || z[..z.len() - 1] != x[..x.len() - 1] {
        return None;
    }
    let mut s = x.to_vec();
    *s.last_mut().unwrap() += z[z.len() - 1];
    Some(s)
}

impl fmt::Display for Linear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Linear::Identity => write!(f, "I"),
            Linear::Conv { kh, kw, cin, cout, stride, .. } => write!(f, "conv{kh}x{kw} {cin}->{cout}/{stride}"),
            Linear::UpConv { kh, kw, cin, cout, .. } => write!(f, "up+conv{kh}x{kw} {cin}->{cout}"),
            Linear::Dense { din, dout } => write!(f, "dense {din}->{dout}"),
            Linear::Diagonal { channels } => write!(f, "diag({channels})"),
        }
    }
}

impl fmt::Display for NetworkSpec {
    /// One line per layer: index, input wiring, operator, bias, activation,
    /// output shape.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shapes = self.shapes().map_err(|_| fmt::Error)?;
        writeln!(f, "input {:?}", self.input_shape)?;
        for (li, l) in self.layers.iter().enumerate() {
            let k = li + 1;
            let wiring = match l.concat_from {
                Some(i) => format!("C(z{i},z{k})"),
                None => format!("z{k}"),
            };
            let skip = match &l.skip {
                Some(s) => format!(" + A(z{}) [{}]", s.from, s.op),
                None => String::new(),
            };
            let act = match l.activation {
                Activation::Identity => "id".to_string(),
                Activation::Relu => "relu".into(),
                Activation::MaxPool2 => "maxpool2".into(),
                Activation::BatchNorm { .. } => "bn-normalize".into(),
                Activation::Terminal { a, p, q, split } => format!("terminal(a={a}, p={p}, q={q}, split={split})"),
            };
            writeln!(f, "L{k:<3} {wiring:<12} {}{skip} bias={:?} act={act} -> {:?}", l.weight, l.bias, shapes[k])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_inference_tracks_concat_and_pool() {
        let spec = NetworkSpec::new(
            vec![4, 4, 1],
            vec![
                LayerSpec::new(Linear::Conv { kh: 3, kw: 3, cin: 1, cout: 2, pad: PadSpec::uniform(1), stride: 1 }, Bias::PerChannel(2), Activation::Relu),
                LayerSpec::new(Linear::Identity, Bias::None, Activation::MaxPool2),
                LayerSpec::new(Linear::UpConv { kh: 2, kw: 2, cin: 2, cout: 2, pad: PadSpec::new(0, 1, 0, 1) }, Bias::None, Activation::Relu),
                LayerSpec::new(Linear::Conv { kh: 1, kw: 1, cin: 4, cout: 1, pad: PadSpec::NONE, stride: 1 }, Bias::Scalar, Activation::Identity)
                    .with_concat(2),
            ],
        );
        let s = spec.shapes().unwrap();
        assert_eq!(s, vec![vec![4, 4, 1], vec![4, 4, 2], vec![2, 2, 2], vec![4, 4, 2], vec![4, 4, 1]]);
        let ids: Vec<_> = spec.param_shapes().into_iter().map(|(id, _)| id).collect();
        assert_eq!(ids, ["L1.W", "L1.b", "L3.W", "L4.W", "L4.b"]);
    }

    #[test]
    fn forward_references_are_rejected() {
        let mut spec = NetworkSpec::new(vec![3], vec![LayerSpec::new(Linear::Identity, Bias::None, Activation::Relu).with_concat(2)]);
        assert!(spec.shapes().is_err());
        spec.layers[0].concat_from = Some(1);
        assert_eq!(spec.output_shape().unwrap(), vec![6]);
    }

    #[test]
    fn odd_pool_and_misplaced_terminal_fail() {
        let spec = NetworkSpec::new(vec![3, 3, 1], vec![LayerSpec::new(Linear::Identity, Bias::None, Activation::MaxPool2)]);
        assert!(spec.shapes().is_err());
        let t = Activation::Terminal { a: 1.0, p: 2.0, q: 2.0, split: 0 };
        let spec = NetworkSpec::new(
            vec![2],
            vec![LayerSpec::new(Linear::Identity, Bias::None, t), LayerSpec::new(Linear::Identity, Bias::None, Activation::Relu)],
        );
        assert!(spec.shapes().is_err());
    }
}
