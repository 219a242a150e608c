//! Stability-constrained constant-feedback solvers.
//!
//! Four routes to a constant gain `K` with `rho(F + GK) < 1`:
//!
//! * `S0`: alternating minimization between the finite-horizon value
//!   function of `K` and a Lyapunov-LMI certificate fitted to `K`.
//! * `S1`: derivative-free search over a costate factor `L`, minimizing the
//!   closed-loop finite-horizon cost of the induced gain.
//! * `S2`: derivative-free search over `L` on the value-matrix consistency
//!   objective.
//! * `SInf`: the stationary Riccati solution, available exactly when the
//!   pair `(F, Q^{1/2})` is detectable.
//!
//! Each solver has a robust variant over a sampled scenario set.

mod are;
mod lmi;
mod s0;
mod search;

use std::time::Duration;

use thiserror::Error;

use crate::lqr::LqrError;
use crate::matrix::{Mat, MatrixError};

pub use are::{feedback_from_l, pbh_detectable, sinf_solve, sinf_solve_robust, AreSolution};
pub use lmi::{
    c2_solve, c2_solve_multi, lyapunov_lmi_check, BarrierConfig, C2Solution, LmiCertificate,
    LmiOutcome,
};
pub use s0::{c1_value_and_gradient, s0_solve, s0_solve_robust, S0Config, S0Objective};
pub use search::{s1_solve, s1_solve_robust, s2_solve, s2_solve_robust, NmMethodConfig};

use crate::lqr::CostSpec;
use crate::scenario::ScenarioSet;
use rand::Rng;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("the pair (F, Q^(1/2)) is not detectable")]
    NotDetectable,
    #[error("no detectable scenario in the sample set")]
    NoDetectableScenarios,
    #[error("LMI barrier could not reach a strictly feasible point (best slack {best_slack:.3e})")]
    BarrierInfeasible { best_slack: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Which stabilized solver produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    S0,
    S1,
    S2,
    SInf,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::S0 => "s0",
            Method::S1 => "s1",
            Method::S2 => "s2",
            Method::SInf => "sinf",
        })
    }
}

/// Certificate data attached to a stabilized solution.
#[derive(Debug, Clone)]
pub enum Certificate {
    /// Lyapunov LMI triple found by the S0 route.
    Lmi(LmiCertificate),
    /// Stationary Riccati solution found by the SInf route.
    Are(AreSolution),
    /// Costate factor found by the S1/S2 searches.
    Factor { l: Mat },
}

/// A constant-feedback solution with its diagnostics.
///
/// `rho_closed` is always recomputed from the returned gain, never cached
/// from an intermediate iterate.
#[derive(Debug, Clone)]
pub struct StabilizedSolution {
    pub gain: Mat,
    pub method: Method,
    pub rho_closed: f64,
    pub cost: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    pub converged: bool,
    pub certificate: Option<Certificate>,
    /// For robust SInf runs: how many scenarios passed the detectability
    /// screen and entered the maximization.
    pub retained_scenarios: Option<usize>,
}

impl StabilizedSolution {
    pub fn is_stabilizing(&self) -> bool {
        self.rho_closed < 1.0
    }
}

/// Configurations of all stabilized solvers, bundled for the robust driver.
#[derive(Debug, Clone, Default)]
pub struct SolverConfig {
    pub s0: S0Config,
    pub nm: NmMethodConfig,
}

/// Runs one stabilized method against a sampled scenario set, minimizing
/// the worst case over the scenarios. With a single scenario every method
/// reduces exactly to its deterministic counterpart.
pub fn robust_solve<R: Rng>(
    method: Method,
    scenarios: &ScenarioSet,
    cost: &CostSpec,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<StabilizedSolution, StabilityError> {
    robust_solve_warm(method, scenarios, cost, cfg, rng, None)
}

/// [`robust_solve`] continued from a previous solution instead of a random
/// initialization; used by leave-one-out support-subsample extraction,
/// where "the result is unchanged" is a continuation question.
pub fn robust_solve_warm<R: Rng>(
    method: Method,
    scenarios: &ScenarioSet,
    cost: &CostSpec,
    cfg: &SolverConfig,
    rng: &mut R,
    warm: Option<&StabilizedSolution>,
) -> Result<StabilizedSolution, StabilityError> {
    match method {
        Method::S0 => {
            let warm_parts = warm.and_then(|w| match &w.certificate {
                Some(Certificate::Lmi(cert)) => Some((&w.gain, cert)),
                _ => None,
            });
            s0_solve_robust(scenarios, cost, &cfg.s0, rng, warm_parts)
        }
        Method::S1 | Method::S2 => {
            let warm_l = warm.and_then(|w| match &w.certificate {
                Some(Certificate::Factor { l }) => Some(l),
                _ => None,
            });
            if method == Method::S1 {
                s1_solve_robust(scenarios, cost, &cfg.nm, rng, warm_l)
            } else {
                s2_solve_robust(scenarios, cost, &cfg.nm, rng, warm_l)
            }
        }
        Method::SInf => sinf_solve_robust(scenarios, cost),
    }
}

pub(crate) fn closed_loop(f: &Mat, g: &Mat, k: &Mat) -> Mat {
    f + g * k
}

/// Worst closed-loop spectral radius of `K` across a scenario list.
pub(crate) fn worst_rho(
    f_mats: &[Mat],
    g: &Mat,
    k: &Mat,
) -> Result<f64, MatrixError> {
    let mut worst = 0.0f64;
    for f in f_mats {
        worst = worst.max(crate::matrix::spectral_radius(&closed_loop(f, g, k))?);
    }
    Ok(worst)
}
