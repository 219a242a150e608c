//! Limited-memory BFGS with Armijo backtracking.
//!
//! The two-loop recursion builds the search direction from the most recent
//! curvature pairs; the line search halves the step until the sufficient
//! decrease condition holds. On a failed line search the memory is dropped
//! and a damped gradient step is attempted before giving up, which keeps the
//! iterate sequence monotone.

use std::collections::VecDeque;

use crate::matrix::Vector;

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of curvature pairs retained.
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Maximum halvings per line search.
    pub max_backtracks: usize,
    /// Iteration cap.
    pub max_iterations: usize,
    /// Stop when the gradient norm falls below `grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            armijo_c: 1e-4,
            max_backtracks: 40,
            max_iterations: 500,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vector,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`. The returned value never exceeds `f(x0)`.
pub fn lbfgs_minimize<F>(x0: Vector, cfg: &LbfgsConfig, mut f: F) -> LbfgsResult
where
    F: FnMut(&Vector) -> (f64, Vector),
{
    let mut x = x0;
    let (mut fx, mut grad) = f(&x);
    let mut pairs: VecDeque<(Vector, Vector, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut gamma = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iterations {
        iterations = iter;
        if grad.norm() <= cfg.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }

        // Two-loop recursion.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let alpha = rho * s.dot(&q);
            q -= y * alpha;
            alphas.push(alpha);
        }
        q *= gamma;
        for ((s, y, rho), alpha) in pairs.iter().zip(alphas.iter().rev()) {
            let beta = rho * y.dot(&q);
            q += s * (alpha - beta);
        }
        let mut dir = -q;
        let mut slope = grad.dot(&dir);
        if !slope.is_finite() || slope >= 0.0 {
            dir = -grad.clone();
            slope = grad.dot(&dir);
        }

        let mut accepted = None;
        let mut step = 1.0;
        for _ in 0..cfg.max_backtracks {
            let candidate = &x + &dir * step;
            let (fc, gc) = f(&candidate);
            if fc.is_finite() && fc <= fx + cfg.armijo_c * step * slope {
                accepted = Some((candidate, fc, gc, step));
                break;
            }
            step *= 0.5;
        }

        let (x_new, f_new, g_new) = match accepted {
            Some((xc, fc, gc, _)) => (xc, fc, gc),
            None => {
                // Restart: drop curvature memory, try a damped gradient step.
                pairs.clear();
                gamma = 1.0;
                let damped = 1e-3 / (1.0 + grad.norm());
                let candidate = &x - &grad * damped;
                let (fc, gc) = f(&candidate);
                if fc.is_finite() && fc < fx {
                    (candidate, fc, gc)
                } else {
                    break;
                }
            }
        };

        let s = &x_new - &x;
        let y = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            gamma = sy / y.dot(&y);
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        grad = g_new;
    }

    LbfgsResult {
        x,
        value: fx,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn minimizes_convex_quadratic() {
        // f(x) = sum (i+1) (x_i - i)^2
        let res = lbfgs_minimize(Vector::zeros(5), &LbfgsConfig::default(), |x| {
            let mut f = 0.0;
            let mut g = Vector::zeros(5);
            for i in 0..5 {
                let w = (i + 1) as f64;
                let d = x[i] - i as f64;
                f += w * d * d;
                g[i] = 2.0 * w * d;
            }
            (f, g)
        });
        assert!(res.converged);
        for i in 0..5 {
            assert_relative_eq!(res.x[i], i as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let res = lbfgs_minimize(
            Vector::from_vec(vec![-1.2, 1.0]),
            &LbfgsConfig {
                max_iterations: 2000,
                ..LbfgsConfig::default()
            },
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = Vector::from_vec(vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ]);
                (f, g)
            },
        );
        assert!(res.value <= 1e-10);
        assert_relative_eq!(res.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(res.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn never_increases_objective() {
        // Nonsmooth max of two quadratics: descent must still hold.
        let start = Vector::from_vec(vec![2.0, -3.0]);
        let f0 = {
            let x = &start;
            (x[0] - 1.0).powi(2).max((x[1] + 2.0).powi(2))
        };
        let res = lbfgs_minimize(start, &LbfgsConfig::default(), |x| {
            let q1 = (x[0] - 1.0).powi(2);
            let q2 = (x[1] + 2.0).powi(2);
            if q1 >= q2 {
                (q1, Vector::from_vec(vec![2.0 * (x[0] - 1.0), 0.0]))
            } else {
                (q2, Vector::from_vec(vec![0.0, 2.0 * (x[1] + 2.0)]))
            }
        });
        assert!(res.value <= f0);
    }
}
