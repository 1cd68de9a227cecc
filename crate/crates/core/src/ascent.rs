//! Small-dimensional likelihood maximisation in unconstrained coordinates.
//!
//! Each iteration takes a Newton step when the finite-difference Hessian of
//! the analytic gradient is negative definite and falls back to the plain
//! gradient otherwise. Either direction goes through an Armijo backtracking
//! line search, so the objective never decreases.

use crate::error::{HazardError, Result};

#[derive(Debug, Clone, Copy)]
pub struct AscentOptions {
    pub max_iter: usize,
    /// Stop once the gradient infinity-norm falls below this.
    pub grad_tol: f64,
    /// Also stop once a Newton step moves no coordinate by more than this;
    /// guards against a gradient whose round-off floor sits above
    /// `grad_tol`.
    pub step_tol: f64,
    /// Any coordinate beyond +-bound is reported as a boundary run-away.
    pub bound: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            bound: 25.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, g| m.max(g.abs()))
}

/// Solve `a x = b` for symmetric positive definite `a` (row-major, n x n).
/// Returns `None` if `a` is not positive definite.
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Gradient norm under which a stalled Newton line search counts as
/// converged rather than failed.
pub const STALL_TOL: f64 = 1e-6;

/// A stalled Newton line search also counts as converged when the
/// quadratic model predicts a gain below this fraction of the objective:
/// the remaining improvement is lost in round-off.
pub const STALL_GAIN: f64 = 1e-10;

/// Maximise `f`, which returns the objective and its gradient.
pub fn maximize<F>(f: F, x0: &[f64], opts: AscentOptions) -> Result<AscentResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut value, mut grad) = f(&x);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(HazardError::Domain(
            "objective is not finite at the starting point".into(),
        ));
    }
    for iter in 0..opts.max_iter {
        let gnorm = inf_norm(&grad);
        if gnorm < opts.grad_tol {
            return Ok(AscentResult {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
            });
        }

        // Negative Hessian by forward differences of the gradient.
        let h = 1e-5;
        let mut neg_hess = vec![0.0; n * n];
        let mut hess_ok = true;
        for j in 0..n {
            let mut xp = x.clone();
            xp[j] += h;
            let (_, gp) = f(&xp);
            for i in 0..n {
                let d = -(gp[i] - grad[i]) / h;
                if !d.is_finite() {
                    hess_ok = false;
                }
                neg_hess[i * n + j] = d;
            }
        }
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (neg_hess[i * n + j] + neg_hess[j * n + i]);
                neg_hess[i * n + j] = s;
                neg_hess[j * n + i] = s;
            }
        }
        let newton = if hess_ok {
            cholesky_solve(&neg_hess, &grad)
        } else {
            None
        };
        let (direction, used_newton) = match newton {
            Some(d) if d.iter().all(|v| v.is_finite()) => (d, true),
            _ => (grad.clone(), false),
        };
        if used_newton && inf_norm(&direction) < opts.step_tol {
            return Ok(AscentResult {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
            });
        }
        let slope: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();

        let mut step = 1.0;
        // Cap the first trial step so a wild direction cannot leap off the map.
        let dmax = inf_norm(&direction);
        if dmax > 2.0 {
            step = 2.0 / dmax;
        }
        let mut accepted = None;
        while step > 1e-20 {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(a, d)| a + step * d).collect();
            if trial == x {
                // the step no longer moves the iterate
                break;
            }
            let (tv, tg) = f(&trial);
            if tv.is_finite()
                && tg.iter().all(|g| g.is_finite())
                && tv >= value + 1e-4 * step * slope
            {
                accepted = Some((trial, tv, tg));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((nx, nv, ng)) => {
                x = nx;
                value = nv;
                grad = ng;
            }
            None if used_newton && (gnorm < STALL_TOL || 0.5 * slope <= STALL_GAIN * value.abs().max(1.0)) => {
                // A Newton step that cannot improve the objective in floating
                // point: the iterate is as good as this precision allows.
                return Ok(AscentResult {
                    x,
                    value,
                    grad_norm: gnorm,
                    iterations: iter,
                });
            }
            None => {
                return Err(HazardError::Convergence {
                    iterations: iter,
                    grad_norm: gnorm,
                    params: x,
                });
            }
        }
        if let Some(c) = x.iter().find(|c| c.abs() > opts.bound) {
            return Err(HazardError::Boundary(format!(
                "coordinate {c:.3} exceeded +-{} after {} iterations",
                opts.bound,
                iter + 1
            )));
        }
    }
    Err(HazardError::Convergence {
        iterations: opts.max_iter,
        grad_norm: inf_norm(&grad),
        params: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| {
            let v = -(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2) - x[0] * x[1];
            let g = vec![-2.0 * (x[0] - 1.0) - x[1], -6.0 * (x[1] + 2.0) - x[0]];
            (v, g)
        };
        let r = maximize(f, &[0.0, 0.0], AscentOptions::default()).unwrap();
        // stationary point of the quadratic
        let (a, b) = (r.x[0], r.x[1]);
        assert!((-2.0 * (a - 1.0) - b).abs() < 1e-8);
        assert!((-6.0 * (b + 2.0) - a).abs() < 1e-8);
    }

    #[test]
    fn unbounded_objective_hits_boundary() {
        let f = |x: &[f64]| (x[0], vec![1.0]);
        let err = maximize(f, &[0.0], AscentOptions::default()).unwrap_err();
        assert!(matches!(err, HazardError::Boundary(_)));
    }
}
