//! Nelder-Mead simplex search with the standard reflection/expansion/
//! contraction/shrink coefficients (1, 2, 0.5, 0.5) and a single restart
//! from the best vertex once the simplex collapses.

use crate::matrix::Vector;

#[derive(Debug, Clone)]
pub struct NelderMeadConfig {
    /// Total function-evaluation budget.
    pub max_evals: usize,
    /// Stop when the value spread satisfies
    /// `f_worst - f_best <= f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
    /// Stop when the simplex diameter satisfies
    /// `diam <= x_tol * (1 + |x_best|)`.
    pub x_tol: f64,
    /// Per-coordinate offset of the initial simplex around the start point.
    pub initial_step: f64,
    /// Restarts from the best vertex after a stagnated convergence.
    pub restarts: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            f_tol: 1e-12,
            x_tol: 1e-9,
            initial_step: 0.1,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vector,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Budget {
    used: usize,
    cap: usize,
}

impl Budget {
    fn spend<F: FnMut(&Vector) -> f64>(&mut self, f: &mut F, x: &Vector) -> Option<f64> {
        if self.used >= self.cap {
            return None;
        }
        self.used += 1;
        Some(f(x))
    }
}

fn run_simplex<F: FnMut(&Vector) -> f64>(
    start: &Vector,
    cfg: &NelderMeadConfig,
    budget: &mut Budget,
    f: &mut F,
) -> (Vector, f64, bool) {
    let dim = start.len();
    let mut simplex: Vec<(Vector, f64)> = Vec::with_capacity(dim + 1);
    match budget.spend(f, start) {
        Some(v) => simplex.push((start.clone(), v)),
        None => return (start.clone(), f64::INFINITY, false),
    }
    for i in 0..dim {
        let mut vertex = start.clone();
        vertex[i] += cfg.initial_step;
        match budget.spend(f, &vertex) {
            Some(v) => simplex.push((vertex, v)),
            None => break,
        }
    }
    if simplex.len() < dim + 1 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex.swap_remove(0);
        return (best.0, best.1, false);
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let diam = simplex[1..]
            .iter()
            .map(|(x, _)| (x - &simplex[0].0).norm())
            .fold(0.0, f64::max);
        if worst - best <= cfg.f_tol * (1.0 + best.abs())
            && diam <= cfg.x_tol * (1.0 + simplex[0].0.norm())
        {
            return (simplex[0].0.clone(), best, true);
        }

        let centroid = {
            let mut c = Vector::zeros(dim);
            for (x, _) in &simplex[..dim] {
                c += x;
            }
            c / dim as f64
        };

        macro_rules! eval_or_return {
            ($x:expr) => {
                match budget.spend(f, &$x) {
                    Some(v) => v,
                    None => return (simplex[0].0.clone(), simplex[0].1, false),
                }
            };
        }

        let reflected = &centroid + (&centroid - &simplex[dim].0) * REFLECT;
        let f_reflected = eval_or_return!(reflected);

        if f_reflected < simplex[0].1 {
            let expanded = &centroid + (&centroid - &simplex[dim].0) * EXPAND;
            let f_expanded = eval_or_return!(expanded);
            simplex[dim] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < simplex[dim - 1].1 {
            simplex[dim] = (reflected, f_reflected);
            continue;
        }

        let contracted = if f_reflected < simplex[dim].1 {
            &centroid + (&reflected - &centroid) * CONTRACT
        } else {
            &centroid + (&simplex[dim].0 - &centroid) * CONTRACT
        };
        let f_contracted = eval_or_return!(contracted);
        if f_contracted < simplex[dim].1.min(f_reflected) {
            simplex[dim] = (contracted, f_contracted);
            continue;
        }

        // Shrink toward the best vertex.
        let best_x = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let shrunk = &best_x + (&entry.0 - &best_x) * SHRINK;
            let v = eval_or_return!(shrunk);
            *entry = (shrunk, v);
        }
    }
}

/// Minimizes `f` from `start`, restarting once from the best vertex when the
/// first run converges with budget to spare.
pub fn nelder_mead_minimize<F: FnMut(&Vector) -> f64>(
    start: Vector,
    cfg: &NelderMeadConfig,
    mut f: F,
) -> NelderMeadResult {
    let mut budget = Budget {
        used: 0,
        cap: cfg.max_evals,
    };
    let (mut x, mut value, mut converged) = run_simplex(&start, cfg, &mut budget, &mut f);
    for _ in 0..cfg.restarts {
        if !converged || budget.used >= budget.cap {
            break;
        }
        let (x2, v2, c2) = run_simplex(&x, cfg, &mut budget, &mut f);
        if v2 < value {
            x = x2;
            value = v2;
            converged = c2;
        }
    }
    NelderMeadResult {
        x,
        value,
        evaluations: budget.used,
        converged,
    }
}
