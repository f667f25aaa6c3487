//! Random small architectures, used to exercise the differentiation and
//! convexity machinery on wiring the U-net does not cover.

use rand::seq::SliceRandom;
use rand::Rng;

use super::spec::{concat_shape, Activation, Bias, LayerSpec, Linear, NetworkSpec};
use crate::tensor::PadSpec;

#[derive(Clone, Copy, Debug)]
pub struct RandomNetOptions {
    pub max_depth: usize,
    /// Draw batch normalization layers.
    pub batch_norm: bool,
    /// Allow flattening into dense layers.
    pub dense: bool,
}

impl Default for RandomNetOptions {
    fn default() -> Self {
        Self {
            max_depth: 4,
            batch_norm: true,
            dense: true,
        }
    }
}

/// A valid network with 1..=`max_depth` layers on a 4x4 or 8x8 input.
pub fn random_network<R: Rng>(rng: &mut R, opts: &RandomNetOptions) -> NetworkSpec {
    let side = *[4usize, 8].choose(rng).unwrap();
    let mut spec = NetworkSpec::new(vec![side, side, rng.gen_range(1..=2)], Vec::new());
    let depth = rng.gen_range(1..=opts.max_depth.max(1));
    let mut shapes = vec![spec.input_shape.clone()];
    for li in 0..depth {
        let k = li + 1;
        let cur = shapes[li].clone();
        let mut input = cur.clone();
        let mut concat_from = None;
        if rng.gen_bool(0.35) {
            let cands: Vec<usize> = (1..=k).filter(|&i| concat_shape(&shapes[i - 1], &cur).is_some()).collect();
            if let Some(&i) = cands.choose(rng) {
                input = concat_shape(&shapes[i - 1], &cur).unwrap();
                concat_from = Some(i);
            }
        }
        let layer = random_layer(rng, opts, &input, li + 1 == depth);
        let mut layer = LayerSpec { concat_from, ..layer };
        let pre = layer.weight.out_shape("random_network", &input).expect("generated op fits");
        if layer.activation != Activation::MaxPool2 && rng.gen_bool(0.3) {
            let cands: Vec<usize> = (1..=k).filter(|&j| skip_op(&shapes[j - 1], &pre).is_some()).collect();
            if let Some(&j) = cands.choose(rng) {
                layer.skip = Some(super::spec::Skip { from: j, op: skip_op(&shapes[j - 1], &pre).unwrap() });
            }
        }
        spec.layers.push(layer);
        shapes = spec.shapes().expect("generated network is consistent");
    }
    spec
}

fn skip_op(src: &[usize], pre: &[usize]) -> Option<Linear> {
    match (src, pre) {
        ([h, w, c], [ho, wo, co]) if h == ho && w == wo => Some(Linear::Conv {
            kh: 1,
            kw: 1,
            cin: *c,
            cout: *co,
            pad: PadSpec::NONE,
            stride: 1,
        }),
        (_, [d]) => Some(Linear::Dense {
            din: src.iter().product(),
            dout: *d,
        }),
        _ => None,
    }
}

fn random_layer<R: Rng>(rng: &mut R, opts: &RandomNetOptions, input: &[usize], last: bool) -> LayerSpec {
    let mut act = || match rng.gen_range(0..if opts.batch_norm { 3 } else { 2 }) {
        0 => Activation::Relu,
        1 => Activation::Identity,
        _ => Activation::BatchNorm { eps: 1e-5 },
    };
    let act = act();
    let bias_for = |rng: &mut R, c: usize| match rng.gen_range(0..3) {
        0 => Bias::None,
        1 => Bias::PerChannel(c),
        _ => Bias::Scalar,
    };
    match *input {
        [d] => {
            if rng.gen_bool(0.3) {
                LayerSpec::new(Linear::Diagonal { channels: d }, bias_for(rng, d), act)
            } else {
                let dout = rng.gen_range(1..=4);
                LayerSpec::new(Linear::Dense { din: d, dout }, bias_for(rng, dout), act)
            }
        }
        [h, w, c] => {
            let mut choices = vec![0, 1, 4];
            if h % 2 == 0 && w % 2 == 0 && h >= 2 {
                choices.push(2);
            }
            if h <= 8 {
                choices.push(3);
            }
            if opts.dense && (last || rng.gen_bool(0.2)) {
                choices.push(5);
            }
            let cout = rng.gen_range(1..=3);
            match *choices.choose(rng).unwrap() {
                0 => LayerSpec::new(
                    Linear::Conv { kh: 3, kw: 3, cin: c, cout, pad: PadSpec::uniform(1), stride: 1 },
                    bias_for(rng, cout),
                    act,
                ),
                1 => LayerSpec::new(
                    Linear::Conv { kh: 1, kw: 1, cin: c, cout, pad: PadSpec::NONE, stride: 1 },
                    bias_for(rng, cout),
                    act,
                ),
                2 => LayerSpec::new(Linear::Identity, Bias::None, Activation::MaxPool2),
                3 => LayerSpec::new(
                    Linear::UpConv { kh: 2, kw: 2, cin: c, cout, pad: PadSpec::new(0, 1, 0, 1) },
                    bias_for(rng, cout),
                    act,
                ),
                4 => LayerSpec::new(Linear::Diagonal { channels: c }, bias_for(rng, c), act),
                _ => {
                    let dout = rng.gen_range(1..=4);
                    LayerSpec::new(Linear::Dense { din: h * w * c, dout }, bias_for(rng, dout), act)
                }
            }
        }
        _ => unreachable!("feature maps are flat or [h, w, c]"),
    }
}
