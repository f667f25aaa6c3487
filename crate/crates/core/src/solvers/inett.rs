use std::io::Write;

use super::inner::{gradient_descent, InnerConfig, InnerReport};
use super::{duality_j2, residual_norm, LinearOperator, Penalty, Schedule, Status, StoppingRule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tomo::norm_y;

/// Iterate, subgradient and bookkeeping after step `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct InettState<T> {
    pub n: usize,
    pub x: Tensor<T>,
    /// Subgradient `xi_n` of the penalty at `x`.
    pub xi: Tensor<T>,
    /// `alpha_n` (0 for the initial state).
    pub alpha: f64,
    /// `norm_y(F x - y)`.
    pub residual: f64,
    /// Penalty value at `x`.
    pub r_value: f64,
}

impl<T: Scalar> InettState<T> {
    /// Step 0: `x0` and `xi_0` from the penalty's gradient at `x0`.
    pub fn initial<P, F>(penalty: &P, op: &F, y: &Tensor<T>, x0: &Tensor<T>) -> Result<Self>
    where
        P: Penalty<T> + ?Sized,
        F: LinearOperator<T> + ?Sized,
    {
        let (rv, xi) = penalty.value_and_grad(x0)?;
        Ok(Self {
            n: 0,
            x: x0.clone(),
            xi,
            alpha: 0.0,
            residual: residual_norm(op, x0, y)?.as_f64(),
            r_value: rv.as_f64(),
        })
    }
}

/// Diagnostics of one outer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub inner: InnerReport,
    /// `B_{xi_{n-1}}(x_n, x_{n-1})`.
    pub bregman_step: f64,
    /// `|xi_n - grad R(x_n)|`, zero when the inner problem is solved exactly.
    pub subgrad_gap: f64,
}

/// One iNETT step: minimize `(1/2M)|F x - y|^2 + alpha_n B_{xi}(x, x_{n-1})`
/// by gradient descent warm-started at `x_{n-1}`, then
/// `xi_n = xi_{n-1} - (1/alpha_n) F^T J2(F x_n - y)`.
pub fn inett_step<T, P, F>(
    state: &InettState<T>,
    penalty: &P,
    op: &F,
    y: &Tensor<T>,
    schedule: &Schedule,
    inner: &InnerConfig,
) -> Result<(InettState<T>, StepReport)>
where
    T: Scalar,
    P: Penalty<T> + ?Sized,
    F: LinearOperator<T> + ?Sized,
{
    let n = state.n + 1;
    let alpha = schedule.alpha(n);
    let a = T::lit(alpha);
    let y = y.reshaped(&op.range_shape())?;
    let half = T::lit(0.5);
    let objective = |x: &Tensor<T>| -> Result<(T, Tensor<T>)> {
        let res = op.apply(x)?.sub(&y)?;
        let (rv, rg) = penalty.value_and_grad(x)?;
        let m = T::from_usize_lossy(res.len());
        let f = half * res.norm_sq() / m + a * (rv - state.xi.dot(x)?);
        let mut g = op.apply_adjoint(&duality_j2(&res))?;
        g.axpy(a, &rg.sub(&state.xi)?)?;
        Ok((f, g))
    };
    let (x, grad, report) = gradient_descent(&state.x, inner, n, objective)?;
    let res = op.apply(&x)?.sub(&y)?;
    let mut xi = state.xi.clone();
    xi.axpy(-T::one() / a, &op.apply_adjoint(&duality_j2(&res))?)?;
    if !xi.all_finite() {
        return Err(Error::Divergence { outer_step: n, inner_step: report.iters });
    }
    let (rv, _) = penalty.value_and_grad(&x)?;
    let bregman_step = rv - T::lit(state.r_value) - state.xi.dot(&x.sub(&state.x)?)?;
    let next = InettState {
        n,
        residual: norm_y(&res).as_f64(),
        r_value: rv.as_f64(),
        x,
        xi,
        alpha,
    };
    let step = StepReport {
        subgrad_gap: grad.norm().as_f64() / alpha,
        bregman_step: bregman_step.as_f64(),
        inner: report,
    };
    Ok((next, step))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InettConfig {
    pub schedule: Schedule,
    pub tau: f64,
    pub n_max: usize,
    pub inner: InnerConfig,
}

impl Default for InettConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            tau: 1.01,
            n_max: 30,
            inner: InnerConfig::default(),
        }
    }
}

/// One row of the iNETT history (row 0 is the initial guess).
#[derive(Clone, Debug, PartialEq)]
pub struct InettRow {
    pub n: usize,
    pub alpha: f64,
    pub residual: f64,
    pub r_value: f64,
    pub inner_iters: usize,
    pub inner_converged: bool,
    pub bregman_step: f64,
    pub subgrad_gap: f64,
}

#[derive(Clone, Debug)]
pub struct InettResult<T> {
    pub x: Tensor<T>,
    pub status: Status,
    pub history: Vec<InettRow>,
}

impl<T> InettResult<T> {
    pub fn n_delta(&self) -> Option<usize> {
        self.status.n_delta()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.residual).collect()
    }

    /// CSV: `n,alpha_n,residual_Y,R_value,inner_iters,bregman_step`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,alpha_n,residual_Y,R_value,inner_iters,bregman_step")?;
        for r in &self.history {
            writeln!(w, "{},{:e},{:e},{:e},{},{:e}", r.n, r.alpha, r.residual, r.r_value, r.inner_iters, r.bregman_step)?;
        }
        Ok(())
    }
}

/// iNETT from `x0` until the discrepancy principle
/// `|F x_n - y|_Y <= tau delta < |F x_{n-1} - y|_Y` holds or `n_max` steps
/// have run. `xi_0` is the penalty's gradient at `x0`.
pub fn inett_solve<T, P, F>(penalty: &P, op: &F, y: &Tensor<T>, delta: f64, x0: &Tensor<T>, cfg: &InettConfig) -> Result<InettResult<T>>
where
    T: Scalar,
    P: Penalty<T> + ?Sized,
    F: LinearOperator<T> + ?Sized,
{
    cfg.schedule.validate()?;
    let rule = StoppingRule::new(cfg.tau, delta, cfg.n_max)?;
    let mut state = InettState::initial(penalty, op, y, x0)?;
    let mut history = vec![InettRow {
        n: 0,
        alpha: 0.0,
        residual: state.residual,
        r_value: state.r_value,
        inner_iters: 0,
        inner_converged: true,
        bregman_step: 0.0,
        subgrad_gap: 0.0,
    }];
    if state.residual <= rule.threshold() {
        return Ok(InettResult { x: state.x, status: Status::Stopped(0), history });
    }
    while state.n < rule.n_max {
        let (next, rep) = inett_step(&state, penalty, op, y, &cfg.schedule, &cfg.inner)?;
        state = next;
        history.push(InettRow {
            n: state.n,
            alpha: state.alpha,
            residual: state.residual,
            r_value: state.r_value,
            inner_iters: rep.inner.iters,
            inner_converged: rep.inner.converged,
            bregman_step: rep.bregman_step,
            subgrad_gap: rep.subgrad_gap,
        });
        if state.residual <= rule.threshold() {
            return Ok(InettResult { x: state.x, status: Status::Stopped(state.n), history });
        }
    }
    Ok(InettResult { x: state.x, status: Status::MaxIterations, history })
}

/// NETT: minimize `(1/2M)|F x - y|^2 + alpha P(x)` by gradient descent from
/// `x0`.
pub fn nett_solve<T, P, F>(penalty: &P, op: &F, y: &Tensor<T>, alpha: f64, inner: &InnerConfig, x0: &Tensor<T>) -> Result<(Tensor<T>, InnerReport)>
where
    T: Scalar,
    P: Penalty<T> + ?Sized,
    F: LinearOperator<T> + ?Sized,
{
    if !(alpha > 0.0) {
        return Err(Error::invalid("nett_solve", format!("alpha = {alpha} must be positive")));
    }
    let a = T::lit(alpha);
    let y = y.reshaped(&op.range_shape())?;
    let objective = |x: &Tensor<T>| -> Result<(T, Tensor<T>)> {
        let res = op.apply(x)?.sub(&y)?;
        let (pv, pg) = penalty.value_and_grad(x)?;
        let m = T::from_usize_lossy(res.len());
        let mut g = op.apply_adjoint(&duality_j2(&res))?;
        g.axpy(a, &pg)?;
        Ok((T::lit(0.5) * res.norm_sq() / m + a * pv, g))
    };
    let (x, _, report) = gradient_descent(x0, inner, 1, objective)?;
    Ok((x, report))
}
