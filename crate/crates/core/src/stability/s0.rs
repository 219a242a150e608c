//! The S0 solver: alternating minimization between the finite-horizon value
//! of a constant gain and a Lyapunov-LMI certificate fitted to it.
//!
//! One outer iteration runs
//!
//! * (C1) `K <- argmin_K  v(K) + |KC - D|_F^2 / (2 mu)` by L-BFGS with the
//!   analytic gradient `sum_t 2RK x_t x_t^T - G^T lambda_{t+1} x_t^T`
//!   plus the penalty term `(K C C^T - D C^T) / mu`;
//! * (C2) `(P, C, D) <- argmin |KC - D|_F^2` subject to every scenario's
//!   shifted LMI, via the barrier solver.
//!
//! In the robust variant, (C1) minimizes the pointwise maximum of the
//! per-scenario values using the gradient of the active scenario (lowest
//! index on ties), and (C2) enforces all scenario LMIs simultaneously.

use std::time::Instant;

use rand::Rng;

use super::lmi::{c2_solve_multi, BarrierConfig, LmiCertificate};
use super::{closed_loop, Certificate, Method, StabilityError, StabilizedSolution};
use crate::lqr::{CostSpec, LtiSystem};
use crate::matrix::{self, Mat, Vector};
use crate::opt::{lbfgs_minimize, LbfgsConfig};
use crate::scenario::ScenarioSet;

/// Parameters of the S0 alternation.
#[derive(Debug, Clone)]
pub struct S0Config {
    /// Strictness shift of the LMI constraint.
    pub xi: f64,
    /// Penalty weight coupling `K` to the certificate.
    pub mu: f64,
    /// Outer alternation cap.
    pub max_outer: usize,
    /// Stop when `|K_i - K_{i-1}|_F` falls below this.
    pub k_tol: f64,
    /// Also stop when the joint objective changes by less than
    /// `obj_tol * (1 + |objective|)` over a full alternation; the penalty
    /// coupling makes the outer steps proximal-small near a fixed point, so
    /// gain stationarity alone can be slow to trigger.
    pub obj_tol: f64,
    /// Scale of the random initialization (standard-normal entries).
    pub init_scale: f64,
    pub lbfgs: LbfgsConfig,
    pub barrier: BarrierConfig,
}

impl Default for S0Config {
    fn default() -> Self {
        Self {
            xi: 1e-5,
            mu: 0.01,
            max_outer: 60,
            k_tol: 1e-6,
            obj_tol: 1e-9,
            init_scale: 0.1,
            lbfgs: LbfgsConfig::default(),
            barrier: BarrierConfig::default(),
        }
    }
}

/// Value and gradient of the (C1) objective at a candidate gain.
#[derive(Debug, Clone)]
pub struct S0Objective {
    /// Worst-case closed-loop finite-horizon value `max_s v_s(K)`.
    pub cost_term: f64,
    /// Penalty `|KC - D|_F^2 / (2 mu)`.
    pub penalty: f64,
    /// Full objective `cost_term + penalty`.
    pub value: f64,
    /// Gradient of the full objective in the entries of `K`.
    pub gradient: Mat,
    /// Index of the scenario attaining the max.
    pub active_scenario: usize,
}

/// (C1) objective for a scenario list: the active scenario's closed-loop
/// trajectory supplies both the value and, through the costate recursion,
/// the analytic gradient.
pub(crate) fn c1_objective(
    k: &Mat,
    c: &Mat,
    d: &Mat,
    f_mats: &[Mat],
    g: &Mat,
    x0: &Vector,
    cost: &CostSpec,
    mu: f64,
) -> S0Objective {
    let horizon = cost.horizon;
    let qk = &cost.q + k.transpose() * &cost.r * k;

    let mut best_value = f64::NEG_INFINITY;
    let mut active = 0usize;
    let mut best_states: Vec<Vector> = Vec::new();
    for (s, f) in f_mats.iter().enumerate() {
        let fk = closed_loop(f, g, k);
        let mut states = Vec::with_capacity(horizon + 1);
        states.push(x0.clone());
        let mut value = 0.0;
        for t in 0..horizon {
            let x = &states[t];
            value += (x.transpose() * &qk * x)[(0, 0)];
            states.push(&fk * x);
        }
        let x_t = &states[horizon];
        value += (x_t.transpose() * &cost.s * x_t)[(0, 0)];
        if value > best_value {
            best_value = value;
            active = s;
            best_states = states;
        }
    }

    // Costates of the active scenario from the stationarity of the
    // stacked Lagrangian: a backward recursion mirroring A(K)^T lambda.
    let fk_active = closed_loop(&f_mats[active], g, k);
    let mut lambda = vec![Vector::zeros(x0.len()); horizon + 1];
    lambda[horizon] = -2.0 * (&cost.s * &best_states[horizon]);
    for t in (0..horizon).rev() {
        lambda[t] = -2.0 * (&qk * &best_states[t]) + fk_active.transpose() * &lambda[t + 1];
    }

    let mut gradient = Mat::zeros(k.nrows(), k.ncols());
    for t in 0..horizon {
        let x = &best_states[t];
        gradient += 2.0 * (&cost.r * k * x) * x.transpose();
        gradient -= (g.transpose() * &lambda[t + 1]) * x.transpose();
    }

    let resid = k * c - d;
    let penalty = resid.norm_squared() / (2.0 * mu);
    gradient += (&resid * c.transpose()) / mu;

    S0Objective {
        cost_term: best_value,
        penalty,
        value: best_value + penalty,
        gradient,
        active_scenario: active,
    }
}

/// Public single-system (C1) evaluation.
pub fn c1_value_and_gradient(
    k: &Mat,
    c: &Mat,
    d: &Mat,
    system: &LtiSystem,
    cost: &CostSpec,
    mu: f64,
) -> S0Objective {
    c1_objective(
        k,
        c,
        d,
        std::slice::from_ref(&system.f),
        &system.g,
        &system.x0,
        cost,
        mu,
    )
}

fn mat_from_flat(v: &Vector, rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v.as_slice())
}

pub(crate) fn s0_solve_traced<R: Rng>(
    f_mats: &[Mat],
    g: &Mat,
    x0: &Vector,
    cost: &CostSpec,
    cfg: &S0Config,
    rng: &mut R,
    warm: Option<(&Mat, &LmiCertificate)>,
) -> Result<(StabilizedSolution, Vec<f64>), StabilityError> {
    let started = Instant::now();
    let n = g.nrows();
    let m = g.ncols();

    let (mut k, mut p, mut c, mut d, mut certificate_ready) = match warm {
        Some((gain, cert)) => (
            gain.clone(),
            cert.p.clone(),
            cert.c.clone(),
            cert.d.clone(),
            true,
        ),
        None => {
            let k = crate::random::random_gain(rng, m, n, cfg.init_scale);
            let c = crate::random::random_gain(rng, n, n, cfg.init_scale);
            let d = crate::random::random_gain(rng, m, n, cfg.init_scale);
            // Random symmetric P shifted onto the unit scale floor.
            let raw = crate::random::random_gain(rng, n, n, cfg.init_scale);
            let p = matrix::sym_part(&raw) + Mat::identity(n, n) * 2.0;
            (k, p, c, d, false)
        }
    };
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for outer in 1..=cfg.max_outer {
        iterations = outer;

        // (C1): minimize over K with the certificate pair frozen. The
        // landscape is nonconvex with near-flat regions on both sides of
        // the stability boundary, so the argmin is approximated from two
        // starts: the incumbent gain and the certified gain D C^{-1}. The
        // first start keeps the alternation monotone; the second lets the
        // search enter the certified basin when it is competitive.
        let objective = |kv: &Vector| {
            let k_mat = mat_from_flat(kv, m, n);
            let obj = c1_objective(&k_mat, &c, &d, f_mats, g, x0, cost, cfg.mu);
            (obj.value, matrix::vec_col(&obj.gradient))
        };
        let mut res = lbfgs_minimize(matrix::vec_col(&k), &cfg.lbfgs, objective);
        if certificate_ready {
            if let Ok(certified) = matrix::solve_linear(&c.transpose(), &d.transpose()) {
                let alt = lbfgs_minimize(matrix::vec_col(&certified.transpose()), &cfg.lbfgs, objective);
                if alt.value < res.value {
                    res = alt;
                }
            }
        }
        let k_new = mat_from_flat(&res.x, m, n);
        trace.push(res.value);

        // (C2): refit the certificate to the new gain; keep the incumbent
        // pair if it fits K better (block-coordinate descent never
        // increases the joint objective this way).
        let warm = certificate_ready.then_some((&p, &c, &d));
        let c2 = c2_solve_multi(&k_new, f_mats, g, cfg.xi, &cfg.barrier, warm)?;
        let incumbent_residual = (&k_new * &c - &d).norm();
        if !certificate_ready || c2.residual <= incumbent_residual {
            p = c2.p;
            c = c2.c;
            d = c2.d;
        }
        certificate_ready = true;
        trace.push(c1_objective(&k_new, &c, &d, f_mats, g, x0, cost, cfg.mu).value);

        let step = (&k_new - &k).norm();
        k = k_new;
        if step < cfg.k_tol {
            converged = true;
            break;
        }
        if trace.len() >= 4 {
            let prev = trace[trace.len() - 3];
            let now = trace[trace.len() - 1];
            if (prev - now).abs() <= cfg.obj_tol * (1.0 + now.abs()) {
                converged = true;
                break;
            }
        }
    }

    let rho_closed = super::worst_rho(f_mats, g, &k)?;
    let mut cost_value = f64::NEG_INFINITY;
    for f in f_mats {
        let system = LtiSystem::new(f.clone(), g.clone(), x0.clone())?;
        cost_value = cost_value.max(
            crate::lqr::rollout(&system, cost, crate::lqr::Policy::Constant(&k))?.cost,
        );
    }

    let solution = StabilizedSolution {
        gain: k,
        method: Method::S0,
        rho_closed,
        cost: cost_value,
        iterations,
        wall_time: started.elapsed(),
        converged,
        certificate: Some(Certificate::Lmi(LmiCertificate {
            p,
            c,
            d,
            xi: cfg.xi,
        })),
        retained_scenarios: None,
    };
    Ok((solution, trace))
}

/// Deterministic S0 on a single plant.
pub fn s0_solve<R: Rng>(
    system: &LtiSystem,
    cost: &CostSpec,
    cfg: &S0Config,
    rng: &mut R,
) -> Result<StabilizedSolution, StabilityError> {
    let (solution, _) = s0_solve_traced(
        std::slice::from_ref(&system.f),
        &system.g,
        &system.x0,
        cost,
        cfg,
        rng,
        None,
    )?;
    Ok(solution)
}

/// Robust S0 over a scenario set: worst-case (C1) value, all-scenario (C2)
/// certificate. `warm` continues the alternation from a previous solution
/// (gain plus certificate) instead of a random start.
pub fn s0_solve_robust<R: Rng>(
    scenarios: &ScenarioSet,
    cost: &CostSpec,
    cfg: &S0Config,
    rng: &mut R,
    warm: Option<(&Mat, &LmiCertificate)>,
) -> Result<StabilizedSolution, StabilityError> {
    let (solution, _) = s0_solve_traced(
        &scenarios.f_mats,
        &scenarios.g,
        &scenarios.x0,
        cost,
        cfg,
        rng,
        warm,
    )?;
    Ok(solution)
}
