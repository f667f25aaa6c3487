#![allow(dead_code)]

use inett::autodiff::Graph;
use inett::network::random::{random_network, RandomNetOptions};
use inett::network::{forward, forward_on_graph, init_params, Mode, NetworkSpec, ParamSet, Tracking};
use inett::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// `<w, Phi(x)>` in training mode.
fn objective(spec: &NetworkSpec, params: &ParamSet<f64>, x: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    forward(spec, params, x, Mode::Train).unwrap().dot(w).unwrap()
}

/// Relative L2 error of a gradient against central differences. The
/// denominator is floored at `1e-4 max(1, |f|)`: a bias in front of batch
/// normalization has an exactly zero gradient, and batch normalization
/// amplifies difference noise well beyond `eps |f| / h`.
fn rel_err(got: &Tensor<f64>, fd: &Tensor<f64>, f: f64) -> f64 {
    got.sub(fd).unwrap().norm() / fd.norm().max(got.norm()).max(1e-4 * f.abs().max(1.0))
}

fn central_differences(t: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut out = Tensor::zeros(t.shape());
    for i in 0..t.len() {
        let (mut p, mut m) = (t.clone(), t.clone());
        p.data_mut()[i] += FD_STEP;
        m.data_mut()[i] -= FD_STEP;
        out.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * FD_STEP);
    }
    out
}

/// Worst relative gradient error over every free parameter tensor and the
/// input, for one random network drawn from `seed`.
pub fn random_network_gradient_error(seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_network(&mut rng, &RandomNetOptions::default());
    // jitter away from the zero-bias initialization, which puts ReLUs behind
    // dead units exactly on their kink
    let mut params: ParamSet<f64> = init_params(&spec, &mut rng).unwrap();
    for id in params.free_ids() {
        for v in params.get_mut(&id).unwrap().tensor.data_mut() {
            *v += rng.gen_range(-0.25..0.25);
        }
    }
    let mut shape = vec![2];
    shape.extend_from_slice(&spec.input_shape);
    let x = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    let out_shape = forward(&spec, &params, &x, Mode::Train).unwrap().shape().to_vec();
    let w = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));

    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let (out, bound) = forward_on_graph(&spec, &params, &mut g, xv, Mode::Train, Tracking::Free).unwrap();
    let s = g.dot_const(out, &w).unwrap();
    let grads = g.backward(s).unwrap();

    let f = g.value(s).item().unwrap();
    let mut worst = rel_err(grads.get(xv).unwrap(), &central_differences(&x, |t| objective(&spec, &params, t, &w)), f);
    for id in params.free_ids() {
        let got = grads.get(bound[&id]).unwrap();
        let fd = central_differences(params.tensor(&id).unwrap(), |t| {
            let mut p = params.clone();
            p.get_mut(&id).unwrap().tensor = t.clone();
            objective(&spec, &p, &x, &w)
        });
        worst = worst.max(rel_err(got, &fd, f));
    }
    (worst, format!("{spec}"))
}
