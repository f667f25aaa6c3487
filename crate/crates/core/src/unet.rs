//! The modified U-net assembled from arrow blocks, its convex variant and the
//! uniformly convex regularizer built on top of it.
//!
//! Blocks:
//! * right arrow: 3x3 conv (size-preserving zero padding) + bias, batch
//!   normalization, then `diag(gamma)` + `beta` and ReLU (two layers);
//! * down arrow: 2x2 max-pool (identity weight, no bias);
//! * up arrow: nearest-neighbour 2x enlargement and a 2x2 conv padded
//!   `(0, 1, 0, 1)`, batch normalization, `diag(gamma)` + `beta`, ReLU;
//! * last arrow: 1x1 conv to one channel with a scalar bias.
//!
//! With `d` levels the network has `11 d + 5` layers built from `6 d + 3`
//! blocks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::{
    init_params, make_uniformly_convex, param_id, project_convex, Activation, Bias, ConstraintPlan, LayerSpec, Linear, NetworkSpec,
    ParamSet, Regularizer,
};
use crate::scalar::Scalar;
use crate::tensor::PadSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct UnetConfig {
    pub height: usize,
    pub width: usize,
    /// Number of resolution levels below the input resolution.
    pub levels: usize,
    pub base_channels: usize,
    /// Channel growth per level.
    pub multiplier: usize,
    pub bn_eps: f64,
    pub a: f64,
    pub p: f64,
    pub q: f64,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            levels: 2,
            base_channels: 8,
            multiplier: 2,
            bn_eps: 1e-5,
            a: 1e-3,
            p: 2.0,
            q: 2.0,
        }
    }
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        const OP: &str = "UnetConfig";
        if self.levels == 0 || self.base_channels == 0 || self.multiplier == 0 {
            return Err(Error::invalid(OP, "levels, base_channels and multiplier must be positive"));
        }
        let f = 1usize << self.levels;
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(Error::invalid(OP, format!("{}x{} is not divisible by 2^{}", self.height, self.width, self.levels)));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::invalid(OP, "bn_eps must be positive"));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.multiplier.pow(level as u32)
    }
}

pub fn right_arrow(cin: usize, cout: usize, eps: f64) -> [LayerSpec; 2] {
    [
        LayerSpec::new(
            Linear::Conv { kh: 3, kw: 3, cin, cout, pad: PadSpec::uniform(1), stride: 1 },
            Bias::PerChannel(cout),
            Activation::BatchNorm { eps },
        ),
        LayerSpec::new(Linear::Diagonal { channels: cout }, Bias::PerChannel(cout), Activation::Relu),
    ]
}

pub fn down_arrow() -> LayerSpec {
    LayerSpec::new(Linear::Identity, Bias::None, Activation::MaxPool2)
}

pub fn up_arrow(cin: usize, cout: usize, eps: f64) -> [LayerSpec; 2] {
    [
        LayerSpec::new(
            Linear::UpConv { kh: 2, kw: 2, cin, cout, pad: PadSpec::new(0, 1, 0, 1) },
            Bias::PerChannel(cout),
            Activation::BatchNorm { eps },
        ),
        LayerSpec::new(Linear::Diagonal { channels: cout }, Bias::PerChannel(cout), Activation::Relu),
    ]
}

pub fn last_arrow(cin: usize) -> LayerSpec {
    LayerSpec::new(
        Linear::Conv { kh: 1, kw: 1, cin, cout: 1, pad: PadSpec::NONE, stride: 1 },
        Bias::Scalar,
        Activation::Identity,
    )
}

/// Layer count for `levels` resolution levels.
pub fn unet_depth(levels: usize) -> usize {
    11 * levels + 5
}

/// Block count (arrows) for `levels` resolution levels.
pub fn unet_blocks(levels: usize) -> usize {
    6 * levels + 3
}

/// Architecture only.
pub fn unet_spec(cfg: &UnetConfig) -> Result<NetworkSpec> {
    cfg.validate()?;
    let eps = cfg.bn_eps;
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut skips = Vec::with_capacity(cfg.levels);
    let mut cin = 1;
    for level in 0..cfg.levels {
        let c = cfg.channels(level);
        layers.extend(right_arrow(cin, c, eps));
        layers.extend(right_arrow(c, c, eps));
        // feature map z^{len+1} is the output of the block just pushed
        skips.push((layers.len() + 1, c));
        layers.push(down_arrow());
        cin = c;
    }
    let cb = cfg.channels(cfg.levels);
    layers.extend(right_arrow(cin, cb, eps));
    layers.extend(right_arrow(cb, cb, eps));
    cin = cb;
    for level in (0..cfg.levels).rev() {
        let c = cfg.channels(level);
        layers.extend(up_arrow(cin, c, eps));
        let (skip_z, skip_c) = skips[level];
        let [first, second] = right_arrow(skip_c + c, c, eps);
        layers.push(first.with_concat(skip_z));
        layers.push(second);
        layers.extend(right_arrow(c, c, eps));
        cin = c;
    }
    layers.push(last_arrow(cin));
    let spec = NetworkSpec::new(vec![cfg.height, cfg.width, 1], layers);
    spec.shapes()?;
    Ok(spec)
}

/// Unconstrained U-net with freshly initialized parameters.
pub fn build_unet<T: Scalar, R: Rng>(cfg: &UnetConfig, rng: &mut R) -> Result<(NetworkSpec, ParamSet<T>)> {
    let spec = unet_spec(cfg)?;
    let params = init_params(&spec, rng)?;
    Ok((spec, params))
}

/// Constraint plan of the convex U-net: every weight except the first
/// convolution (all later kernels and every `gamma`) plus the final scalar
/// bias, which makes the output nonnegative.
pub fn convex_plan(spec: &NetworkSpec) -> ConstraintPlan {
    ConstraintPlan::convexity(spec).with(param_id(spec.depth(), "b"))
}

/// Convex U-net: same architecture, parameters projected once so training
/// starts feasible.
pub fn build_convex_unet<T: Scalar, R: Rng>(cfg: &UnetConfig, rng: &mut R) -> Result<(NetworkSpec, ParamSet<T>, ConstraintPlan)> {
    let (spec, mut params) = build_unet(cfg, rng)?;
    let plan = convex_plan(&spec);
    project_convex(&mut params, &plan)?;
    Ok((spec, params, plan))
}

/// `a |x|_p^p + |Phi(x)|_q^q` for a trained convex U-net with frozen batch
/// statistics.
pub fn build_regularizer<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>, a: f64, p: f64, q: f64) -> Result<Regularizer<T>> {
    make_uniformly_convex(spec, params, a, p, q)
}

/// Text summary: layer listing, depth, block count, parameter counts.
pub fn build_report<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>, plan: &ConstraintPlan, levels: usize) -> String {
    let mut s = format!("{spec}");
    s += &format!(
        "layers: {} (expected {})\nblocks: {}\nfree parameters: {}\nconstrained tensors: {}\n",
        spec.depth(),
        unet_depth(levels),
        unet_blocks(levels),
        params.free_count(),
        plan.len()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, Mode};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> UnetConfig {
        UnetConfig {
            height: 8,
            width: 8,
            levels: 1,
            base_channels: 2,
            ..UnetConfig::default()
        }
    }

    #[test]
    fn depth_for_one_level_matches_hand_count() {
        // right(2) right(2) down(1) | right(2) right(2) | up(2) right(2) right(2) | last(1)
        let spec = unet_spec(&small()).unwrap();
        assert_eq!(spec.depth(), 2 + 2 + 1 + 2 + 2 + 2 + 2 + 2 + 1);
        assert_eq!(spec.depth(), unet_depth(1));
        assert_eq!(unet_blocks(1), 9);
        assert_eq!(unet_spec(&UnetConfig::default()).unwrap().depth(), unet_depth(2));
    }

    #[test]
    fn default_shapes_and_concat_channels() {
        let cfg = UnetConfig::default();
        let spec = unet_spec(&cfg).unwrap();
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[0], vec![64, 64, 1]);
        assert_eq!(shapes.last().unwrap(), &vec![64, 64, 1]);
        for (li, l) in spec.layers.iter().enumerate() {
            if let Some(i) = l.concat_from {
                let skip = &shapes[i - 1];
                let up = &shapes[li];
                assert_eq!(skip[..2], up[..2]);
                match l.weight {
                    Linear::Conv { cin, .. } => assert_eq!(cin, skip[2] + up[2]),
                    _ => panic!("concat feeds a convolution"),
                }
            }
        }
    }

    #[test]
    fn indivisible_sizes_are_rejected() {
        let cfg = UnetConfig { height: 30, ..UnetConfig::default() };
        assert!(unet_spec(&cfg).is_err());
    }

    #[test]
    fn right_arrow_preserves_size_and_is_nonnegative() {
        let spec = NetworkSpec::new(vec![5, 7, 2], right_arrow(2, 3, 1e-5).to_vec());
        assert_eq!(spec.output_shape().unwrap(), vec![5, 7, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ps: ParamSet<f64> = init_params(&spec, &mut rng).unwrap();
        let x = Tensor::from_fn(&[2, 5, 7, 2], |i| (i as f64 * 0.37).sin());
        assert!(forward(&spec, &ps, &x, Mode::Train).unwrap().min() >= 0.0);
    }

    #[test]
    fn identity_center_right_arrow_is_relu() {
        let spec = NetworkSpec::new(vec![3, 3, 1], right_arrow(1, 1, 1e-5).to_vec());
        let mut ps = ParamSet::<f64>::new();
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data_mut()[4] = 1.0;
        ps.insert("L1.W", k, false);
        ps.insert("L1.b", Tensor::zeros(&[1]), false);
        ps.insert("L2.W", Tensor::ones(&[1]), false);
        ps.insert("L2.b", Tensor::zeros(&[1]), false);
        ps.insert("L1.bn_mean", Tensor::zeros(&[1]), true);
        ps.insert("L1.bn_var", Tensor::full(&[1], 1.0 - 1e-5), true);
        let x = Tensor::from_f64(&[1, 3, 3, 1], &[-1.0, 2.0, -3.0, 4.0, 0.0, 1.5, -0.5, 3.0, -2.0]).unwrap();
        let y = forward(&spec, &ps, &x, Mode::Infer).unwrap();
        assert!(y.max_abs_diff(&crate::ops::relu(&x)).unwrap() < 1e-12);
    }

    #[test]
    fn up_arrow_doubles_and_last_arrow_sums_channels() {
        let spec = NetworkSpec::new(vec![4, 4, 3], up_arrow(3, 2, 1e-5).to_vec());
        assert_eq!(spec.output_shape().unwrap(), vec![8, 8, 2]);
        let spec = NetworkSpec::new(vec![2, 2, 3], vec![last_arrow(3)]);
        let mut ps = ParamSet::<f64>::new();
        ps.insert("L1.W", Tensor::ones(&[1, 1, 3, 1]), false);
        ps.insert("L1.b", Tensor::zeros(&[1]), false);
        let x = Tensor::from_fn(&[1, 2, 2, 3], |i| i as f64);
        let y = forward(&spec, &ps, &x, Mode::Infer).unwrap();
        assert_eq!(y.data(), &[3.0, 12.0, 21.0, 30.0]);
        assert_eq!(spec.param_shapes()[1].1, vec![1]);
    }

    #[test]
    fn down_arrow_has_no_parameters() {
        let spec = NetworkSpec::new(vec![4, 4, 2], vec![down_arrow()]);
        assert!(spec.param_shapes().is_empty());
        assert_eq!(spec.output_shape().unwrap(), vec![2, 2, 2]);
    }

    #[test]
    fn convex_plan_covers_exactly_later_weights_and_last_bias() {
        let spec = unet_spec(&UnetConfig::default()).unwrap();
        let plan = convex_plan(&spec);
        let depth = spec.depth();
        for (id, _) in spec.param_shapes() {
            let k: usize = id[1..id.find('.').unwrap()].parse().unwrap();
            let want = (id.ends_with(".W") && k >= 2) || id == format!("L{depth}.b");
            assert_eq!(plan.contains(&id), want, "{id}");
        }
        assert!(!plan.contains("L1.W"));
        // every gamma is constrained
        for (li, l) in spec.layers.iter().enumerate() {
            if matches!(l.weight, Linear::Diagonal { .. }) {
                assert!(plan.contains(&format!("L{}.W", li + 1)));
            }
        }
    }

    #[test]
    fn convex_and_plain_share_architecture() {
        let cfg = small();
        let (s1, p1) = build_unet::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (s2, p2, plan) = build_convex_unet::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(p1.free_count(), p2.free_count());
        assert!(crate::network::min_constrained(&p2, &plan).unwrap() >= 0.0);
    }

    #[test]
    fn projected_unet_output_is_nonnegative() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (spec, mut ps, _) = build_convex_unet::<f64, _>(&cfg, &mut rng).unwrap();
        let x = Tensor::from_fn(&[6, 8, 8, 1], |i| ((i * 7919) % 13) as f64 / 6.0 - 1.0);
        crate::network::finalize_bn(&spec, &mut ps, &x).unwrap();
        let y = forward(&spec, &ps, &x, Mode::Infer).unwrap();
        assert!(y.min() >= 0.0);
    }

    #[test]
    fn up_arrow_gradients_match_finite_differences() {
        use crate::autodiff::Graph;
        use crate::network::{forward_on_graph, Tracking};
        use rand::Rng;
        let spec = NetworkSpec::new(vec![2, 2, 2], up_arrow(2, 2, 1e-5).to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps: ParamSet<f64> = init_params(&spec, &mut rng).unwrap();
        ps.insert("L2.b", Tensor::from_fn(&[2], |_| rng.gen_range(-0.3..0.3)), false);
        let x = Tensor::from_fn(&[3, 2, 2, 2], |_| rng.gen_range(-1.0..1.0));
        let w = Tensor::from_fn(&[3, 4, 4, 2], |_| rng.gen_range(-1.0..1.0));
        let loss = |ps: &ParamSet<f64>, x: &Tensor<f64>| forward(&spec, ps, x, Mode::Train).unwrap().dot(&w).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let (out, bound) = forward_on_graph(&spec, &ps, &mut g, xv, Mode::Train, Tracking::Free).unwrap();
        let l = g.dot_const(out, &w).unwrap();
        let grads = g.backward(l).unwrap();
        let h = 1e-5;
        let check = |ad: f64, fd: f64| assert!((ad - fd).abs() / (1.0 + fd.abs()) < 1e-6, "{ad} vs {fd}");
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            check(grads.get(xv).unwrap().data()[i], (loss(&ps, &p) - loss(&ps, &m)) / (2.0 * h));
        }
        for (id, &v) in &bound {
            for i in 0..ps.tensor(id).unwrap().len() {
                let (mut p, mut m) = (ps.clone(), ps.clone());
                p.get_mut(id).unwrap().tensor.data_mut()[i] += h;
                m.get_mut(id).unwrap().tensor.data_mut()[i] -= h;
                check(grads.get(v).unwrap().data()[i], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h));
            }
        }
    }
}
