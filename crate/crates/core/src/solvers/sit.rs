use std::io::Write;

use super::{residual_norm, LinearOperator, Schedule, Status, StoppingRule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Solves `A v = b` for symmetric positive definite `A` given as a closure,
/// from `v = 0`, until `|b - A v| <= tol |b|` (checked on the true residual).
/// Returns the solution and the iteration count.
pub fn conjugate_gradient<T: Scalar>(
    apply: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    b: &Tensor<T>,
    tol: f64,
    max_iters: usize,
) -> Result<(Tensor<T>, usize)> {
    let bn = b.norm();
    let mut v = Tensor::zeros(b.shape());
    if bn == T::zero() {
        return Ok((v, 0));
    }
    let target = T::lit(tol) * bn;
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_sq();
    let mut iters = 0;
    while iters < max_iters {
        let ap = apply(&p)?;
        let pap = p.dot(&ap)?;
        if !(pap > T::zero()) {
            return Err(Error::invalid("conjugate_gradient", "operator is not positive definite"));
        }
        let step = rr / pap;
        v.axpy(step, &p)?;
        r.axpy(-step, &ap)?;
        iters += 1;
        let rr_new = r.norm_sq();
        if rr_new.sqrt() <= target {
            // confirm on the true residual, restart from it otherwise
            r = b.sub(&apply(&v)?)?;
            let true_rr = r.norm_sq();
            if true_rr.sqrt() <= target {
                return Ok((v, iters));
            }
            p = r.clone();
            rr = true_rr;
            continue;
        }
        let beta = rr_new / rr;
        p = p.scale(beta);
        p.axpy(T::one(), &r)?;
        rr = rr_new;
    }
    Err(Error::CgNotConverged { iters, tol })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SitConfig {
    pub schedule: Schedule,
    pub tau: f64,
    pub n_max: usize,
    pub cg_tol: f64,
    /// Defaults to `10 N` when `None`.
    pub cg_max_iters: Option<usize>,
}

impl Default for SitConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            tau: 1.01,
            n_max: 30,
            cg_tol: 1e-10,
            cg_max_iters: None,
        }
    }
}

/// One SIT step `x - (F^T F + alpha_hat I)^{-1} F^T (F x - y)`. Returns the
/// new iterate and the CG iteration count.
pub fn sit_step<T, F>(op: &F, x: &Tensor<T>, y: &Tensor<T>, alpha_hat: f64, cg_tol: f64, cg_max_iters: usize) -> Result<(Tensor<T>, usize)>
where
    T: Scalar,
    F: LinearOperator<T> + ?Sized,
{
    let y = y.reshaped(&op.range_shape())?;
    let rhs = op.apply_adjoint(&op.apply(x)?.sub(&y)?)?;
    let ah = T::lit(alpha_hat);
    let normal = |v: &Tensor<T>| -> Result<Tensor<T>> {
        let mut out = op.apply_adjoint(&op.apply(v)?)?;
        out.axpy(ah, v)?;
        Ok(out)
    };
    let (v, iters) = conjugate_gradient(normal, &rhs, cg_tol, cg_max_iters)?;
    Ok((x.sub(&v)?, iters))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SitRow {
    pub n: usize,
    pub alpha_hat: f64,
    pub residual: f64,
    pub cg_iters: usize,
}

#[derive(Clone, Debug)]
pub struct SitResult<T> {
    pub x: Tensor<T>,
    pub status: Status,
    pub history: Vec<SitRow>,
}

impl<T> SitResult<T> {
    pub fn n_delta(&self) -> Option<usize> {
        self.status.n_delta()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.residual).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,alpha_hat,residual_Y,cg_iters")?;
        for r in &self.history {
            writeln!(w, "{},{:e},{:e},{}", r.n, r.alpha_hat, r.residual, r.cg_iters)?;
        }
        Ok(())
    }
}

/// Stationary iterated Tikhonov with `alpha_hat_n = 2 M alpha_n`, stopped by
/// the discrepancy principle.
pub fn sit_solve<T, F>(op: &F, y: &Tensor<T>, delta: f64, x0: &Tensor<T>, cfg: &SitConfig) -> Result<SitResult<T>>
where
    T: Scalar,
    F: LinearOperator<T> + ?Sized,
{
    cfg.schedule.validate()?;
    let rule = StoppingRule::new(cfg.tau, delta, cfg.n_max)?;
    let m = op.num_rows() as f64;
    let cg_max = cfg.cg_max_iters.unwrap_or(10 * x0.len());
    let mut x = x0.clone();
    let mut history = vec![SitRow { n: 0, alpha_hat: 0.0, residual: residual_norm(op, &x, y)?.as_f64(), cg_iters: 0 }];
    if history[0].residual <= rule.threshold() {
        return Ok(SitResult { x, status: Status::Stopped(0), history });
    }
    for n in 1..=rule.n_max {
        let alpha_hat = 2.0 * m * cfg.schedule.alpha(n);
        let (xn, cg_iters) = sit_step(op, &x, y, alpha_hat, cfg.cg_tol, cg_max)?;
        x = xn;
        let residual = residual_norm(op, &x, y)?.as_f64();
        history.push(SitRow { n, alpha_hat, residual, cg_iters });
        if residual <= rule.threshold() {
            return Ok(SitResult { x, status: Status::Stopped(n), history });
        }
    }
    Ok(SitResult { x, status: Status::MaxIterations, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::DenseOperator;
    use crate::tomo::ProjectionOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
            for k in 0..n {
                a.swap(c * n + k, p * n + k);
            }
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r * n + c] / a[c * n + c];
                for k in c..n {
                    a[r * n + k] -= f * a[c * n + k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r * n + r];
        }
        x
    }

    #[test]
    fn cg_step_matches_dense_solve() {
        let op = ProjectionOperator::<f64>::new(6, 9, 5).unwrap();
        let (m, n) = (op.num_rows(), 36);
        let f = op.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[6, 6], |_| rng.gen::<f64>());
        let y = Tensor::from_fn(&[9, 5], |_| rng.gen::<f64>() * 3.0);
        let alpha_hat = 2.0 * m as f64 * 0.5f64.powi(3);
        let (xn, _) = sit_step(&op, &x, &y, alpha_hat, 1e-10, 360).unwrap();
        let r: Vec<f64> = (0..m).map(|i| (0..n).map(|j| f[i * n + j] * x.data()[j]).sum::<f64>() - y.data()[i]).collect();
        let rhs: Vec<f64> = (0..n).map(|j| (0..m).map(|i| f[i * n + j] * r[i]).sum()).collect();
        let mut a = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                a[j * n + k] = (0..m).map(|i| f[i * n + j] * f[i * n + k]).sum::<f64>() + if j == k { alpha_hat } else { 0.0 };
            }
        }
        let v = dense_solve(a, rhs);
        for j in 0..n {
            assert!((xn.data()[j] - (x.data()[j] - v[j])).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_meets_residual_contract() {
        let op = ProjectionOperator::<f64>::new(8, 12, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = Tensor::from_fn(&[8, 8], |_| rng.gen::<f64>() - 0.5);
        let ah = 0.05;
        let normal = |v: &Tensor<f64>| {
            let mut o = op.apply_adjoint(&op.apply(v)?)?;
            o.axpy(ah, v)?;
            Ok(o)
        };
        let (v, _) = conjugate_gradient(normal, &b, 1e-10, 640).unwrap();
        let res = b.sub(&normal(&v).unwrap()).unwrap().norm();
        assert!(res <= 1e-10 * b.norm());
        assert_eq!(conjugate_gradient(normal, &Tensor::zeros(&[8, 8]), 1e-10, 5).unwrap().1, 0);
        assert!(matches!(conjugate_gradient(normal, &b, 1e-14, 1), Err(Error::CgNotConverged { iters: 1, .. })));
    }

    #[test]
    fn sit_stops_by_discrepancy() {
        let op = DenseOperator::new(2, vec![2], vec![1.0, 0.2, 0.1, 0.8]).unwrap();
        let y = Tensor::from_f64(&[2], &[1.0, 0.5]).unwrap();
        let cfg = SitConfig::default();
        let delta = 1e-3;
        let res = sit_solve(&op, &y, delta, &Tensor::full(&[2], 0.5), &cfg).unwrap();
        let n = res.n_delta().unwrap();
        assert!(StoppingRule::new(cfg.tau, delta, cfg.n_max).unwrap().holds_at(&res.residuals(), n));
        assert_eq!(res.history[1].alpha_hat, 2.0 * 2.0 * 0.5);
    }
}
