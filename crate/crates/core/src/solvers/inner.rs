use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inner gradient descent settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerConfig {
    /// Initial step size `s`.
    pub step: f64,
    pub max_iters: usize,
    /// Stop when `|grad| <= tol (1 + |x|)`.
    pub tol: f64,
    /// Give up after this many consecutive halvings within one iteration.
    pub max_halvings: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            step: 1.0,
            max_iters: 200,
            tol: 1e-6,
            max_halvings: 60,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.tol >= 0.0) {
            return Err(Error::invalid("InnerConfig", "step must be positive and tol nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerReport {
    /// Accepted iterations.
    pub iters: usize,
    pub converged: bool,
    pub objective: f64,
    pub grad_norm: f64,
    /// Step size in effect at return.
    pub step: f64,
    /// Objective after each accepted iteration, starting with the initial value.
    pub objectives: Vec<f64>,
}

/// Gradient descent `x <- x - s grad f(x)` from `x0`. A step that increases
/// the objective (or makes it non-finite) is retried with `s / 2`, and the
/// halved step is kept. Iteration ends at the gradient tolerance, at
/// `max_iters`, or when a step no longer changes `x`. `eval` returns the
/// objective and its gradient. `outer_step` only labels divergence errors.
pub fn gradient_descent<T: Scalar>(
    x0: &Tensor<T>,
    cfg: &InnerConfig,
    outer_step: usize,
    mut eval: impl FnMut(&Tensor<T>) -> Result<(T, Tensor<T>)>,
) -> Result<(Tensor<T>, Tensor<T>, InnerReport)> {
    cfg.validate()?;
    let diverged = |inner_step| Error::Divergence { outer_step, inner_step };
    let mut x = x0.clone();
    let (mut f, mut g) = eval(&x)?;
    if !x.all_finite() || !f.is_finite() || !g.all_finite() {
        return Err(diverged(0));
    }
    let mut s = cfg.step;
    let mut report = InnerReport {
        iters: 0,
        converged: false,
        objective: f.as_f64(),
        grad_norm: g.norm().as_f64(),
        step: s,
        objectives: vec![f.as_f64()],
    };
    loop {
        let gn = g.norm().as_f64();
        report.grad_norm = gn;
        if gn <= cfg.tol * (1.0 + x.norm().as_f64()) {
            report.converged = true;
            break;
        }
        if report.iters == cfg.max_iters {
            break;
        }
        let k = report.iters + 1;
        let mut halvings = 0;
        let mut stalled = false;
        loop {
            let mut xn = x.clone();
            xn.axpy(T::lit(-s), &g)?;
            if xn == x {
                stalled = true;
                break;
            }
            let (fnew, gnew) = eval(&xn)?;
            if fnew.is_finite() && gnew.all_finite() && accept(f, fnew, &g, &gnew) {
                x = xn;
                f = fnew;
                g = gnew;
                break;
            }
            halvings += 1;
            if halvings > cfg.max_halvings {
                return Err(diverged(k));
            }
            s *= 0.5;
        }
        if stalled {
            break;
        }
        report.iters = k;
        report.objectives.push(f.as_f64());
    }
    report.objective = f.as_f64();
    report.step = s;
    Ok((x, g, report))
}

/// A step is accepted if the objective does not increase, or if the change
/// is within rounding and the gradient shrinks.
fn accept<T: Scalar>(f: T, fnew: T, g: &Tensor<T>, gnew: &Tensor<T>) -> bool {
    if fnew <= f {
        return true;
    }
    let slack = T::lit(8.0) * T::epsilon() * f.abs().max(fnew.abs());
    fnew - f <= slack && gnew.norm_sq() < g.norm_sq()
}
