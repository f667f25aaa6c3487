use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::exec::{forward, Mode};
use super::params::ParamSet;
use super::regularizer::Regularizer;
use super::spec::NetworkSpec;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Draws test points for midpoint checks.
///
/// Most draws map standard normal entries into `[0, 1.5 * max_value]` via
/// `1.5 * max_value * clamp((g + 3) / 6, 0, 1)`; a fraction
/// `outlier_fraction` of draws are plain normals times `outlier_scale`.
#[derive(Clone, Copy, Debug)]
pub struct MidpointSampler {
    pub max_value: f64,
    pub outlier_fraction: f64,
    pub outlier_scale: f64,
}

impl MidpointSampler {
    pub fn new(max_value: f64) -> Self {
        Self {
            max_value,
            outlier_fraction: 0.1,
            outlier_scale: 10.0,
        }
    }

    pub fn draw<T: Scalar, R: Rng>(&self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let outlier = rng.gen_bool(self.outlier_fraction.clamp(0.0, 1.0));
        let top = 1.5 * self.max_value;
        Tensor::from_fn(shape, |_| {
            let g: f64 = StandardNormal.sample(rng);
            T::lit(if outlier {
                self.outlier_scale * g
            } else {
                top * ((g + 3.0) / 6.0).clamp(0.0, 1.0)
            })
        })
    }
}

/// A triple on which a convexity inequality failed by the most.
#[derive(Clone, Debug)]
pub struct Witness<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub t: f64,
    /// Output component (flat index) with the largest excess.
    pub component: usize,
}

/// Outcome of a randomized convexity falsification run.
#[derive(Clone, Debug)]
pub struct ConvexityReport<T> {
    pub trials: usize,
    pub violations: usize,
    /// Largest excess `lhs - rhs` over all trials and components.
    pub worst: f64,
    pub witness: Option<Witness<T>>,
}

impl<T> ConvexityReport<T> {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

const CHUNK: usize = 8;

/// Tests `Phi(t x + (1-t) w) <= t Phi(x) + (1-t) Phi(w) + tol` in every
/// output component over `trials` random triples. Batch normalization must
/// be finalized (inference mode is used).
pub fn check_componentwise_convex<T: Scalar, R: Rng>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    trials: usize,
    tol: f64,
    sampler: &MidpointSampler,
    rng: &mut R,
) -> Result<ConvexityReport<T>> {
    let in_shape = spec.input_shape.clone();
    let per_in: usize = in_shape.iter().product();
    let mut report = ConvexityReport {
        trials,
        violations: 0,
        worst: f64::NEG_INFINITY,
        witness: None,
    };
    let mut done = 0;
    while done < trials {
        let n = CHUNK.min(trials - done);
        let mut triples = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(3 * n * per_in);
        for _ in 0..n {
            let x: Tensor<T> = sampler.draw(&in_shape, rng);
            let w: Tensor<T> = sampler.draw(&in_shape, rng);
            let t: f64 = rng.gen();
            let tt = T::lit(t);
            let mid = x.zip_map(&w, |a, b| tt * a + (T::one() - tt) * b)?;
            data.extend_from_slice(x.data());
            data.extend_from_slice(w.data());
            data.extend_from_slice(mid.data());
            triples.push((x, w, t));
        }
        let mut shape = vec![3 * n];
        shape.extend_from_slice(&in_shape);
        let out = forward(spec, params, &Tensor::new(&shape, data)?, Mode::Infer)?;
        let per_out = out.len() / (3 * n);
        for (i, (x, w, t)) in triples.into_iter().enumerate() {
            let base = 3 * i * per_out;
            let (fx, fw, fm) = (
                &out.data()[base..base + per_out],
                &out.data()[base + per_out..base + 2 * per_out],
                &out.data()[base + 2 * per_out..base + 3 * per_out],
            );
            let mut worst = (f64::NEG_INFINITY, 0);
            for c in 0..per_out {
                let excess = fm[c].as_f64() - (t * fx[c].as_f64() + (1.0 - t) * fw[c].as_f64());
                if excess > worst.0 {
                    worst = (excess, c);
                }
            }
            record(&mut report, worst.0, tol, || Witness { x, w, t, component: worst.1 });
        }
        done += n;
    }
    Ok(report)
}

/// Tests `R(t x + (1-t) w) <= t R(x) + (1-t) R(w) - a t (1-t) |x - w|^2 + tol`
/// over `trials` random pairs. With `a = 0` this is a plain convexity check.
pub fn check_uniformly_convex<T: Scalar, R: Rng>(
    reg: &Regularizer<T>,
    a: f64,
    trials: usize,
    tol: f64,
    sampler: &MidpointSampler,
    rng: &mut R,
) -> Result<ConvexityReport<T>> {
    let in_shape = reg.input_shape().to_vec();
    let mut report = ConvexityReport {
        trials,
        violations: 0,
        worst: f64::NEG_INFINITY,
        witness: None,
    };
    let mut done = 0;
    while done < trials {
        let n = CHUNK.min(trials - done);
        let mut batch = Vec::with_capacity(3 * n);
        let mut triples = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Tensor<T> = sampler.draw(&in_shape, rng);
            let w: Tensor<T> = sampler.draw(&in_shape, rng);
            let t: f64 = rng.gen();
            let tt = T::lit(t);
            let mid = x.zip_map(&w, |p, q| tt * p + (T::one() - tt) * q)?;
            batch.push(x.clone());
            batch.push(w.clone());
            batch.push(mid);
            triples.push((x, w, t));
        }
        let vals = reg.values(&batch)?;
        for (i, (x, w, t)) in triples.into_iter().enumerate() {
            let (rx, rw, rm) = (vals[3 * i].as_f64(), vals[3 * i + 1].as_f64(), vals[3 * i + 2].as_f64());
            let dist = x.sub(&w)?.norm_sq().as_f64();
            let excess = rm - (t * rx + (1.0 - t) * rw - a * t * (1.0 - t) * dist);
            record(&mut report, excess, tol, || Witness { x, w, t, component: 0 });
        }
        done += n;
    }
    Ok(report)
}

fn record<T>(report: &mut ConvexityReport<T>, excess: f64, tol: f64, witness: impl FnOnce() -> Witness<T>) {
    if excess > tol || excess.is_nan() {
        report.violations += 1;
    }
    if excess > report.worst || excess.is_nan() {
        report.worst = excess;
        report.witness = Some(witness());
    }
}
