//! The stationary-Riccati route (SInf) and the costate-factor feedback map
//! shared by the S1/S2 searches.

use std::time::Instant;

use super::{closed_loop, Certificate, Method, StabilityError, StabilizedSolution};
use crate::lqr::{self, CostSpec, LtiSystem, Policy};
use crate::matrix::{self, Mat, MatrixError};
use crate::scenario::ScenarioSet;

/// Stationary solution of the difference Riccati recursion started at zero.
#[derive(Debug, Clone)]
pub struct AreSolution {
    pub m_inf: Mat,
    pub k_inf: Mat,
    pub iterations: usize,
}

/// PBH detectability of `(F, Q^{1/2})`: every eigenvalue of `F` with
/// modulus at least one must be observable through `Q^{1/2}`.
///
/// Complex eigenvalues `a + bi` are handled with the realified pencil
/// `[[F - aI, bI], [-bI, F - aI], [Q12, 0], [0, Q12]]`, whose column rank
/// drops below `2n` exactly when the complex PBH matrix loses rank.
pub fn pbh_detectable(f: &Mat, q_sqrt: &Mat) -> Result<bool, MatrixError> {
    let n = f.nrows();
    let schur = nalgebra::linalg::Schur::try_new(f.clone(), f64::EPSILON, 20_000)
        .ok_or(MatrixError::EigenNonConvergence)?;
    for sigma in schur.complex_eigenvalues().iter() {
        if sigma.norm() < 1.0 - 1e-9 {
            continue;
        }
        let (a, b) = (sigma.re, sigma.im);
        let mut stack = Mat::zeros(4 * n, 2 * n);
        let fa = f - Mat::identity(n, n) * a;
        stack.view_mut((0, 0), (n, n)).copy_from(&fa);
        stack.view_mut((0, n), (n, n)).copy_from(&(Mat::identity(n, n) * b));
        stack.view_mut((n, 0), (n, n)).copy_from(&(Mat::identity(n, n) * (-b)));
        stack.view_mut((n, n), (n, n)).copy_from(&fa);
        stack.view_mut((2 * n, 0), (n, n)).copy_from(q_sqrt);
        stack.view_mut((3 * n, n), (n, n)).copy_from(q_sqrt);

        let svd = stack.svd(false, false);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > smax * 1e-10)
            .count();
        if rank < 2 * n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Feedback gain induced by a costate factor `L`:
/// `K = -(R + G^T L^T L G)^{-1} G^T L^T L F`.
pub fn feedback_from_l(l: &Mat, f: &Mat, g: &Mat, r: &Mat) -> Result<Mat, MatrixError> {
    let ltl = l.transpose() * l;
    let gl = g.transpose() * &ltl;
    let inner = r + &gl * g;
    let rhs = &gl * f;
    Ok(-matrix::solve_linear(&inner, &rhs)?)
}

fn dre_fixed_point(
    system: &LtiSystem,
    cost: &CostSpec,
) -> Result<AreSolution, StabilityError> {
    let n = system.state_dim();
    let mut m = Mat::zeros(n, n);
    let max_iters = 500_000;
    for iter in 0..max_iters {
        let (next, gain) = lqr::dre_step(&m, system, cost)?;
        let delta = (&next - &m).norm();
        if delta <= 1e-13 * (1.0 + m.norm()) {
            return Ok(AreSolution {
                m_inf: next,
                k_inf: gain,
                iterations: iter + 1,
            });
        }
        m = next;
    }
    Err(StabilityError::NumericalFailure(format!(
        "Riccati iteration did not reach a fixed point within {max_iters} steps"
    )))
}

/// Infinite-horizon feedback: detectability check, then the Riccati
/// recursion from zero until stationarity. Returns
/// [`StabilityError::NotDetectable`] when the PBH test fails, which is a
/// verdict, not a numerical failure.
pub fn sinf_solve(
    system: &LtiSystem,
    cost: &CostSpec,
) -> Result<StabilizedSolution, StabilityError> {
    let started = Instant::now();
    let q_sqrt = matrix::psd_sqrt(&cost.q)?;
    if !pbh_detectable(&system.f, &q_sqrt)? {
        return Err(StabilityError::NotDetectable);
    }
    let are = dre_fixed_point(system, cost)?;
    let gain = are.k_inf.clone();
    let rho_closed = matrix::spectral_radius(&closed_loop(&system.f, &system.g, &gain))?;
    let cost_value = lqr::rollout(system, cost, Policy::Constant(&gain))?.cost;
    Ok(StabilizedSolution {
        gain,
        method: Method::SInf,
        rho_closed,
        cost: cost_value,
        iterations: are.iterations,
        wall_time: started.elapsed(),
        converged: true,
        certificate: Some(Certificate::Are(are)),
        retained_scenarios: None,
    })
}

/// Robust SInf: solve the stationary Riccati problem on every detectable
/// scenario, evaluate each gain's finite-horizon cost on its own scenario,
/// and return the gain of the worst (cost-maximizing) one. Non-detectable
/// scenarios are discarded; their count is reflected in
/// `retained_scenarios`.
pub fn sinf_solve_robust(
    scenarios: &ScenarioSet,
    cost: &CostSpec,
) -> Result<StabilizedSolution, StabilityError> {
    let started = Instant::now();
    let q_sqrt = matrix::psd_sqrt(&cost.q)?;
    let mut retained = 0usize;
    let mut worst: Option<(f64, StabilizedSolution)> = None;
    let mut iterations = 0usize;
    for i in 0..scenarios.len() {
        let system = scenarios.system(i)?;
        if !pbh_detectable(&system.f, &q_sqrt)? {
            continue;
        }
        retained += 1;
        let are = dre_fixed_point(&system, cost)?;
        iterations += are.iterations;
        let objective = lqr::rollout(&system, cost, Policy::Constant(&are.k_inf))?.cost;
        let replace = match &worst {
            Some((best_obj, _)) => objective > *best_obj,
            None => true,
        };
        if replace {
            let sol = StabilizedSolution {
                gain: are.k_inf.clone(),
                method: Method::SInf,
                rho_closed: 0.0, // recomputed below over all scenarios
                cost: objective,
                iterations: 0,
                wall_time: Default::default(),
                converged: true,
                certificate: Some(Certificate::Are(are)),
                retained_scenarios: None,
            };
            worst = Some((objective, sol));
        }
    }
    let (_, mut solution) = worst.ok_or(StabilityError::NoDetectableScenarios)?;
    solution.rho_closed = super::worst_rho(&scenarios.f_mats, &scenarios.g, &solution.gain)?;
    // Epigraph-consistent objective: worst rollout cost of the returned
    // gain across all scenarios.
    let mut cost_value = f64::NEG_INFINITY;
    for i in 0..scenarios.len() {
        let system = scenarios.system(i)?;
        cost_value = cost_value.max(lqr::rollout(&system, cost, Policy::Constant(&solution.gain))?.cost);
    }
    solution.cost = cost_value;
    solution.iterations = iterations;
    solution.wall_time = started.elapsed();
    solution.retained_scenarios = Some(retained);
    Ok(solution)
}
