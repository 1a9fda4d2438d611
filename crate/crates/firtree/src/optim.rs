//! Limited-memory quasi-Newton minimizer with central-difference gradients.
//!
//! Both latent-trait fitting and the numeric inaccuracy path optimize smooth
//! objectives of modest dimension, so a hand-rolled L-BFGS with Armijo
//! backtracking and curvature-guarded updates is sufficient and keeps the
//! evaluation order fully deterministic.

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when the gradient sup-norm falls below this.
    pub grad_tol: f64,
    /// Stop when the accepted step sup-norm falls below step_tol * (1 + |x|).
    pub step_tol: f64,
    /// History pairs kept for the two-loop recursion.
    pub memory: usize,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 500,
            grad_tol: 1e-7,
            step_tol: 1e-6,
            memory: 10,
            fd_step: 6e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn central_gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    fd_step: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = fd_step * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    g
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f` from `x0`. The objective may return non-finite values outside
/// its domain; the line search treats them as rejections.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut grad = central_gradient(&mut f, &x, opts.fd_step);
    // (s, y, 1/s'y) history, oldest first.
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        if sup_norm(&grad) <= opts.grad_tol {
            converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = vec![0.0; history.len()];
        for (idx, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alphas[idx] = a;
            for k in 0..n {
                d[k] -= a * y[k];
            }
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dot(s, y) / dot(y, y);
            if gamma.is_finite() && gamma > 0.0 {
                for v in d.iter_mut() {
                    *v *= gamma;
                }
            }
        }
        for (idx, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            let a = alphas[idx];
            for k in 0..n {
                d[k] += (a - b) * s[k];
            }
        }

        let mut slope = dot(&grad, &d);
        if !(slope < 0.0) {
            // Not a descent direction; fall back to steepest descent.
            d = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &d);
            history.clear();
        }

        // Armijo backtracking.
        let mut t = 1.0;
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        for _ in 0..50 {
            for k in 0..n {
                x_new[k] = x[k] + t * d[k];
            }
            let cand = f(&x_new);
            if cand.is_finite() && cand <= fx + 1e-4 * t * slope {
                f_new = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No progress possible along this direction at representable steps.
            break;
        }

        let step: Vec<f64> = (0..n).map(|k| x_new[k] - x[k]).collect();
        let grad_new = central_gradient(&mut f, &x_new, opts.fd_step);
        let yvec: Vec<f64> = (0..n).map(|k| grad_new[k] - grad[k]).collect();
        let sy = dot(&step, &yvec);
        if sy > 1e-10 * sup_norm(&step) * sup_norm(&yvec) && sy > 0.0 {
            history.push((step.clone(), yvec, 1.0 / sy));
            if history.len() > opts.memory {
                history.remove(0);
            }
        }

        let step_small = sup_norm(&step) <= opts.step_tol * (1.0 + sup_norm(&x_new));
        x = x_new;
        fx = f_new;
        grad = grad_new;
        if step_small {
            converged = true;
            break;
        }
    }

    if sup_norm(&grad) <= opts.grad_tol {
        converged = true;
    }
    OptimResult {
        grad_norm: sup_norm(&grad),
        x,
        value: fx,
        iterations,
        converged,
    }
}
