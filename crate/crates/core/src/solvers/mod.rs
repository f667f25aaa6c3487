//! Reconstruction solvers: iNETT, NETT, SIT and the shared pieces (penalties,
//! Bregman distance, step-size schedules, inner gradient descent, CG).

mod inett;
mod inner;
mod sit;

pub use inett::{inett_solve, inett_step, nett_solve, InettConfig, InettResult, InettRow, InettState, StepReport};
pub use inner::{gradient_descent, InnerConfig, InnerReport};
pub use sit::{conjugate_gradient, sit_solve, sit_step, SitConfig, SitResult, SitRow};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::network::{forward, forward_on_graph, Mode, NetworkSpec, ParamSet, Regularizer, Tracking};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tomo::{norm_y, ProjectionOperator};

/// A linear forward operator with its transpose.
pub trait LinearOperator<T: Scalar> {
    /// Shape of the images the operator acts on.
    fn domain_shape(&self) -> Vec<usize>;
    /// Shape of the data it produces.
    fn range_shape(&self) -> Vec<usize>;
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn apply_adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>>;

    /// Number of measurements `M`.
    fn num_rows(&self) -> usize {
        self.range_shape().iter().product()
    }
}

impl<T: Scalar> LinearOperator<T> for ProjectionOperator<T> {
    fn domain_shape(&self) -> Vec<usize> {
        vec![self.image_size(), self.image_size()]
    }
    fn range_shape(&self) -> Vec<usize> {
        self.sinogram_shape().to_vec()
    }
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ProjectionOperator::apply(self, x)
    }
    fn apply_adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        ProjectionOperator::apply_adjoint(self, y)
    }
}

/// Dense row-major matrix acting on flattened images of `domain` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator<T> {
    pub rows: usize,
    pub domain: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> DenseOperator<T> {
    pub fn new(rows: usize, domain: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let cols: usize = domain.iter().product();
        if data.len() != rows * cols {
            return Err(Error::shape("DenseOperator::new", format!("{} entries", rows * cols), data.len()));
        }
        Ok(Self { rows, domain, data })
    }

    pub fn cols(&self) -> usize {
        self.domain.iter().product()
    }
}

impl<T: Scalar> LinearOperator<T> for DenseOperator<T> {
    fn domain_shape(&self) -> Vec<usize> {
        self.domain.clone()
    }
    fn range_shape(&self) -> Vec<usize> {
        vec![self.rows]
    }
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.cols();
        if x.len() != n {
            return Err(Error::shape("DenseOperator::apply", n, x.len()));
        }
        let out = self.data.chunks(n).map(|row| row.iter().zip(x.data()).map(|(a, b)| *a * *b).sum()).collect();
        Tensor::new(&[self.rows], out)
    }
    fn apply_adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.cols();
        if y.len() != self.rows {
            return Err(Error::shape("DenseOperator::apply_adjoint", self.rows, y.len()));
        }
        let mut out = vec![T::zero(); n];
        for (row, &yi) in self.data.chunks(n).zip(y.data()) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += *a * yi;
            }
        }
        Tensor::new(&self.domain, out)
    }
}

/// A differentiable penalty on images.
pub trait Penalty<T: Scalar> {
    fn value(&self, x: &Tensor<T>) -> Result<T>;
    /// Value and one (sub)gradient element, shaped like `x`.
    fn value_and_grad(&self, x: &Tensor<T>) -> Result<(T, Tensor<T>)>;
}

impl<T: Scalar> Penalty<T> for Regularizer<T> {
    fn value(&self, x: &Tensor<T>) -> Result<T> {
        Regularizer::value(self, x)
    }
    fn value_and_grad(&self, x: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        Regularizer::value_and_grad(self, x)
    }
}

/// `a |x|^2`.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic {
    pub a: f64,
}

impl<T: Scalar> Penalty<T> for Quadratic {
    fn value(&self, x: &Tensor<T>) -> Result<T> {
        Ok(T::lit(self.a) * x.norm_sq())
    }
    fn value_and_grad(&self, x: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        Ok((T::lit(self.a) * x.norm_sq(), x.scale(T::lit(2.0 * self.a))))
    }
}

/// `|Phi(x)|^2` for a network in inference mode.
#[derive(Clone, Copy, Debug)]
pub struct NetworkPenalty<'a, T> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParamSet<T>,
}

impl<T: Scalar> NetworkPenalty<'_, T> {
    fn batched(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut shape = vec![1];
        shape.extend_from_slice(&self.spec.input_shape);
        x.reshaped(&shape)
    }
}

impl<T: Scalar> Penalty<T> for NetworkPenalty<'_, T> {
    fn value(&self, x: &Tensor<T>) -> Result<T> {
        Ok(forward(self.spec, self.params, &self.batched(x)?, Mode::Infer)?.norm_sq())
    }
    fn value_and_grad(&self, x: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        let mut g = Graph::new();
        let xv = g.leaf(self.batched(x)?);
        let (out, _) = forward_on_graph(self.spec, self.params, &mut g, xv, Mode::Infer, Tracking::Constant)?;
        let sq = g.sum_squares(out);
        let v = g.value(sq).item()?;
        let mut grads = g.backward(sq)?;
        Ok((v, grads.take(xv)?.reshape(x.shape())?))
    }
}

/// `R(x) - R(xhat) - <xi, x - xhat>`.
pub fn bregman<T: Scalar, P: Penalty<T> + ?Sized>(r: &P, xi: &Tensor<T>, x: &Tensor<T>, xhat: &Tensor<T>) -> Result<T> {
    let d = x.sub(xhat)?;
    Ok(r.value(x)? - r.value(xhat)? - xi.dot(&d)?)
}

/// Duality map of `y -> |y|_Y^2 / 2` for `|y|_Y = |y|_2 / sqrt(M)`: `y / M`.
pub fn duality_j2<T: Scalar>(y: &Tensor<T>) -> Tensor<T> {
    if y.is_empty() {
        return y.clone();
    }
    y.scale(T::one() / T::from_usize_lossy(y.len()))
}

/// Geometric schedule `alpha_n = alpha1 * ratio^(n-1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub alpha1: f64,
    pub ratio: f64,
}

impl Default for Schedule {
    /// `alpha_n = 2^-n`.
    fn default() -> Self {
        Self { alpha1: 0.5, ratio: 0.5 }
    }
}

impl Schedule {
    /// Requires `alpha1 > 0` and `ratio` in `(0, 1]`: then `sum 1/alpha_n`
    /// diverges and `alpha_n <= (1/ratio) alpha_{n+1}`.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite()) {
            return Err(Error::invalid("Schedule", format!("alpha1 = {} must be positive", self.alpha1)));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::invalid("Schedule", format!("ratio = {} must lie in (0, 1]", self.ratio)));
        }
        Ok(())
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha1 * self.ratio.powi(n as i32 - 1)
    }

    /// `c` with `alpha_n <= c alpha_{n+1}`.
    pub fn comparability_constant(&self) -> f64 {
        1.0 / self.ratio
    }

    /// `sum_{n=1}^{count} 1/alpha_n`, in closed form.
    pub fn inverse_sum(&self, count: usize) -> f64 {
        if self.ratio == 1.0 {
            count as f64 / self.alpha1
        } else {
            let q = 1.0 / self.ratio;
            (q.powi(count as i32) - 1.0) / (q - 1.0) / self.alpha1
        }
    }
}

/// Discrepancy-principle parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingRule {
    pub tau: f64,
    pub delta: f64,
    pub n_max: usize,
}

impl StoppingRule {
    pub fn new(tau: f64, delta: f64, n_max: usize) -> Result<Self> {
        if !(tau > 1.0) {
            return Err(Error::invalid("StoppingRule", format!("tau = {tau} must exceed 1")));
        }
        if !(delta >= 0.0) {
            return Err(Error::invalid("StoppingRule", format!("delta = {delta} must be nonnegative")));
        }
        Ok(Self { tau, delta, n_max })
    }

    pub fn threshold(&self) -> f64 {
        self.tau * self.delta
    }

    /// Checks both inequalities at step `n` of a residual history indexed
    /// from `n = 0`.
    pub fn holds_at(&self, residuals: &[f64], n: usize) -> bool {
        let t = self.threshold();
        residuals.get(n).is_some_and(|&r| r <= t) && (n == 0 || residuals[n - 1] > t)
    }
}

/// How an iterative solve ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// The discrepancy principle fired at this step.
    Stopped(usize),
    /// `n_max` steps without meeting the discrepancy principle.
    MaxIterations,
}

impl Status {
    pub fn n_delta(self) -> Option<usize> {
        match self {
            Status::Stopped(n) => Some(n),
            Status::MaxIterations => None,
        }
    }
}

/// `norm_y(F x - y)`.
pub fn residual_norm<T: Scalar, F: LinearOperator<T> + ?Sized>(op: &F, x: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    Ok(norm_y(&op.apply(x)?.sub(&y.reshaped(&op.range_shape())?)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bregman_of_square_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::from_fn(&[4, 4], |_| rng.gen());
        let xh = Tensor::<f64>::from_fn(&[4, 4], |_| rng.gen());
        let q = Quadratic { a: 1.0 };
        let b = bregman(&q, &xh.scale(2.0), &x, &xh).unwrap();
        assert!((b - x.sub(&xh).unwrap().norm_sq()).abs() < 1e-12);
        assert_eq!(bregman(&q, &xh.scale(2.0), &xh, &xh).unwrap(), 0.0);
    }

    #[test]
    fn duality_map_properties() {
        assert_eq!(duality_j2(&Tensor::<f64>::zeros(&[5])), Tensor::zeros(&[5]));
        let y = Tensor::<f64>::from_fn(&[7, 3], |i| (i as f64).cos());
        let j = duality_j2(&y);
        let ny = norm_y(&y);
        assert!((j.dot(&y).unwrap() - ny * ny).abs() < 1e-14);
        // the dual of the scaled norm is sqrt(M) |.|_2
        let dual = (y.len() as f64).sqrt() * j.norm();
        assert!((dual - ny).abs() < 1e-14);
    }

    #[test]
    fn schedule_checks() {
        let s = Schedule::default();
        s.validate().unwrap();
        for n in 1..30 {
            assert_eq!(s.alpha(n), 2f64.powi(-(n as i32)));
            assert!(s.alpha(n) <= s.comparability_constant() * s.alpha(n + 1));
        }
        let direct: f64 = (1..=20).map(|n| 1.0 / s.alpha(n)).sum();
        assert!((s.inverse_sum(20) - direct).abs() < 1e-9 * direct);
        assert!(s.inverse_sum(60) > 1e17);
        assert!(Schedule { alpha1: 1.0, ratio: 1.5 }.validate().is_err());
        assert!(Schedule { alpha1: 0.0, ratio: 0.5 }.validate().is_err());
        assert_eq!(Schedule { alpha1: 2.0, ratio: 1.0 }.inverse_sum(4), 2.0);
    }

    #[test]
    fn stopping_rule_inequalities() {
        let r = StoppingRule::new(1.01, 1.0, 30).unwrap();
        let res = [3.0, 2.0, 1.005, 0.5];
        assert!(!r.holds_at(&res, 1));
        assert!(r.holds_at(&res, 2));
        assert!(!r.holds_at(&res, 3));
        assert!(StoppingRule::new(1.0, 1.0, 3).is_err());
        assert!(StoppingRule::new(1.5, -1.0, 3).is_err());
    }

    #[test]
    fn dense_operator_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DenseOperator::new(5, vec![2, 3], (0..30).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let x = Tensor::from_fn(&[2, 3], |_| rng.gen::<f64>());
        let y = Tensor::from_fn(&[5], |_| rng.gen::<f64>());
        let l = a.apply(&x).unwrap().dot(&y).unwrap();
        let r = x.dot(&a.apply_adjoint(&y).unwrap()).unwrap();
        assert!((l - r).abs() < 1e-12);
    }
}
