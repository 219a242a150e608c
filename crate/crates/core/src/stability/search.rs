//! The S1/S2 derivative-free searches over a costate factor `L`.
//!
//! Both parametrize the gain as
//! `K(L) = -(R + G^T L^T L G)^{-1} G^T L^T L F` and explore the `n x n`
//! entries of `L` with Nelder-Mead. S1 scores `L` by the closed-loop
//! finite-horizon cost; S2 scores it by the value-matrix consistency
//! objective `x0^T L^T L x0 + x_T^T (S - L^T L) x_T` with
//! `x_T = (F + GK)^T x0`.

use std::time::Instant;

use rand::Rng;

use super::are::feedback_from_l;
use super::{closed_loop, Certificate, Method, StabilityError, StabilizedSolution};
use crate::lqr::{self, CostSpec, LtiSystem, Policy};
use crate::matrix::{self, Mat, Vector};
use crate::opt::{nelder_mead_minimize, NelderMeadConfig, NelderMeadResult};
use crate::scenario::ScenarioSet;

/// Settings of the S1/S2 searches.
#[derive(Debug, Clone)]
pub struct NmMethodConfig {
    /// Scale of the random start factor (standard-normal entries).
    pub init_scale: f64,
    /// Function evaluations allowed per variable of `L`.
    pub evals_per_variable: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub initial_step: f64,
    /// Initial simplex step of a warm-started continuation; small, so the
    /// search stays in the incumbent basin unless the objective changed.
    pub warm_initial_step: f64,
}

impl Default for NmMethodConfig {
    fn default() -> Self {
        Self {
            init_scale: 0.1,
            evals_per_variable: 2000,
            f_tol: 1e-12,
            x_tol: 1e-9,
            initial_step: 0.1,
            warm_initial_step: 1e-5,
        }
    }
}

impl NmMethodConfig {
    fn nm_config(&self, dim: usize, warm: bool) -> NelderMeadConfig {
        NelderMeadConfig {
            max_evals: self.evals_per_variable * dim,
            f_tol: self.f_tol,
            x_tol: self.x_tol,
            initial_step: if warm { self.warm_initial_step } else { self.initial_step },
            restarts: usize::from(!warm),
        }
    }
}

fn factor_from_flat(v: &Vector, n: usize) -> Mat {
    Mat::from_column_slice(n, n, v.as_slice())
}

/// Worst-case S1 objective: the closed-loop finite-horizon cost of `K(L)`,
/// maximized over the scenario matrices.
fn s1_objective(
    l: &Mat,
    f_mats: &[Mat],
    g: &Mat,
    x0: &Vector,
    cost: &CostSpec,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for f in f_mats {
        let k = match feedback_from_l(l, f, g, &cost.r) {
            Ok(k) => k,
            Err(_) => return f64::INFINITY,
        };
        let fk = closed_loop(f, g, &k);
        let mut x = x0.clone();
        let mut value = 0.0;
        for _ in 0..cost.horizon {
            let u = &k * &x;
            value += (x.transpose() * &cost.q * &x)[(0, 0)]
                + (u.transpose() * &cost.r * &u)[(0, 0)];
            x = &fk * x;
        }
        value += (x.transpose() * &cost.s * &x)[(0, 0)];
        worst = worst.max(value);
    }
    worst
}

/// Worst-case S2 objective over the scenario matrices.
fn s2_objective(
    l: &Mat,
    f_mats: &[Mat],
    g: &Mat,
    x0: &Vector,
    cost: &CostSpec,
) -> f64 {
    let ltl = l.transpose() * l;
    let mut worst = f64::NEG_INFINITY;
    for f in f_mats {
        let k = match feedback_from_l(l, f, g, &cost.r) {
            Ok(k) => k,
            Err(_) => return f64::INFINITY,
        };
        let fk = closed_loop(f, g, &k);
        let mut x_t = x0.clone();
        for _ in 0..cost.horizon {
            x_t = &fk * x_t;
        }
        let value = (x0.transpose() * &ltl * x0)[(0, 0)]
            + (x_t.transpose() * (&cost.s - &ltl) * &x_t)[(0, 0)];
        worst = worst.max(value);
    }
    worst
}

/// Per-scenario objective values of a factor under one search method,
/// evaluated on an explicit scenario list. The profile is invariant under
/// the orthogonal orbit `L -> UL` along which the searches drift, which
/// makes it the right object for "solution unchanged" comparisons.
pub fn nm_objective_profile(
    method: Method,
    l: &Mat,
    scenarios: &ScenarioSet,
    cost: &CostSpec,
) -> Result<Vec<f64>, StabilityError> {
    let mut out = Vec::with_capacity(scenarios.len());
    for f in &scenarios.f_mats {
        let single = std::slice::from_ref(f);
        let value = match method {
            Method::S1 => s1_objective(l, single, &scenarios.g, &scenarios.x0, cost),
            Method::S2 => s2_objective(l, single, &scenarios.g, &scenarios.x0, cost),
            _ => {
                return Err(StabilityError::NumericalFailure(
                    "objective profile is defined for the S1/S2 searches".into(),
                ))
            }
        };
        out.push(value);
    }
    Ok(out)
}

fn search_solution(
    method: Method,
    result: NelderMeadResult,
    f_mats: &[Mat],
    g: &Mat,
    x0: &Vector,
    cost: &CostSpec,
    started: Instant,
) -> Result<StabilizedSolution, StabilityError> {
    let n = g.nrows();
    let l = factor_from_flat(&result.x, n);

    // The reported gain belongs to the scenario attaining the worst cost;
    // with one scenario this is just K(L).
    let mut worst_cost = f64::NEG_INFINITY;
    let mut gain = Mat::zeros(g.ncols(), n);
    for f in f_mats {
        let k = feedback_from_l(&l, f, g, &cost.r)?;
        let system = LtiSystem::new(f.clone(), g.clone(), x0.clone())?;
        let cost_value = lqr::rollout(&system, cost, Policy::Constant(&k))?.cost;
        if cost_value > worst_cost {
            worst_cost = cost_value;
            gain = k;
        }
    }

    let mut rho_closed = 0.0f64;
    for f in f_mats {
        let k = feedback_from_l(&l, f, g, &cost.r)?;
        rho_closed = rho_closed.max(matrix::spectral_radius(&closed_loop(f, g, &k))?);
    }

    Ok(StabilizedSolution {
        gain,
        method,
        rho_closed,
        cost: worst_cost,
        iterations: result.evaluations,
        wall_time: started.elapsed(),
        converged: result.converged,
        certificate: Some(Certificate::Factor { l }),
        retained_scenarios: None,
    })
}

fn run_search<R: Rng>(
    method: Method,
    f_mats: &[Mat],
    g: &Mat,
    x0: &Vector,
    cost: &CostSpec,
    cfg: &NmMethodConfig,
    rng: &mut R,
    warm: Option<&Mat>,
) -> Result<StabilizedSolution, StabilityError> {
    let started = Instant::now();
    let n = g.nrows();
    let dim = n * n;
    let l0 = match warm {
        Some(l) => l.clone(),
        None => crate::random::random_gain(rng, n, n, cfg.init_scale),
    };
    let objective = |lv: &Vector| {
        let l = factor_from_flat(lv, n);
        match method {
            Method::S1 => s1_objective(&l, f_mats, g, x0, cost),
            Method::S2 => s2_objective(&l, f_mats, g, x0, cost),
            _ => unreachable!("run_search only handles S1/S2"),
        }
    };
    let result = nelder_mead_minimize(
        matrix::vec_col(&l0),
        &cfg.nm_config(dim, warm.is_some()),
        objective,
    );
    search_solution(method, result, f_mats, g, x0, cost, started)
}

/// S1 on a single plant.
pub fn s1_solve<R: Rng>(
    system: &LtiSystem,
    cost: &CostSpec,
    cfg: &NmMethodConfig,
    rng: &mut R,
) -> Result<StabilizedSolution, StabilityError> {
    run_search(
        Method::S1,
        std::slice::from_ref(&system.f),
        &system.g,
        &system.x0,
        cost,
        cfg,
        rng,
        None,
    )
}

/// S2 on a single plant.
pub fn s2_solve<R: Rng>(
    system: &LtiSystem,
    cost: &CostSpec,
    cfg: &NmMethodConfig,
    rng: &mut R,
) -> Result<StabilizedSolution, StabilityError> {
    run_search(
        Method::S2,
        std::slice::from_ref(&system.f),
        &system.g,
        &system.x0,
        cost,
        cfg,
        rng,
        None,
    )
}

/// Robust S1: minimize the worst-case closed-loop cost over the scenarios.
/// `warm` seeds the simplex at a previous factor instead of a random one.
pub fn s1_solve_robust<R: Rng>(
    scenarios: &ScenarioSet,
    cost: &CostSpec,
    cfg: &NmMethodConfig,
    rng: &mut R,
    warm: Option<&Mat>,
) -> Result<StabilizedSolution, StabilityError> {
    run_search(
        Method::S1,
        &scenarios.f_mats,
        &scenarios.g,
        &scenarios.x0,
        cost,
        cfg,
        rng,
        warm,
    )
}

/// Robust S2.
pub fn s2_solve_robust<R: Rng>(
    scenarios: &ScenarioSet,
    cost: &CostSpec,
    cfg: &NmMethodConfig,
    rng: &mut R,
    warm: Option<&Mat>,
) -> Result<StabilizedSolution, StabilityError> {
    run_search(
        Method::S2,
        &scenarios.f_mats,
        &scenarios.g,
        &scenarios.x0,
        cost,
        cfg,
        rng,
        warm,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_unstable(horizon: usize) -> (LtiSystem, CostSpec) {
        let system = LtiSystem::new(
            Mat::from_element(1, 1, 2.0),
            Mat::from_element(1, 1, 1.0),
            Vector::from_element(1, 1.0),
        )
        .unwrap();
        let cost = CostSpec::new(
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            horizon,
        )
        .unwrap();
        (system, cost)
    }

    #[test]
    fn s1_objective_at_zero_factor_is_open_loop_cost() {
        let (system, cost) = scalar_unstable(8);
        let zero = Mat::zeros(1, 1);
        let value = s1_objective(&zero, std::slice::from_ref(&system.f), &system.g, &system.x0, &cost);
        let open = lqr::rollout(&system, &cost, Policy::Constant(&Mat::zeros(1, 1)))
            .unwrap()
            .cost;
        assert_relative_eq!(value, open, epsilon = 1e-12);
    }

    #[test]
    fn s1_improves_on_open_loop_and_lower_bounded_by_optimum() {
        let (system, cost) = scalar_unstable(8);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sol = s1_solve(&system, &cost, &NmMethodConfig::default(), &mut rng).unwrap();
        let open = lqr::rollout(&system, &cost, Policy::Constant(&Mat::zeros(1, 1)))
            .unwrap()
            .cost;
        assert!(sol.cost < open, "no strict decrease: {} vs {}", sol.cost, open);

        let sweep = lqr::dre_sweep(&system, &cost).unwrap();
        let value = (system.x0.transpose() * &sweep.values[0] * &system.x0)[(0, 0)];
        assert!(sol.cost >= value - 1e-8 * (1.0 + value));
    }

    #[test]
    fn s2_objective_examples() {
        // L^T L = S zeroes the terminal mismatch: objective = x0^T S x0.
        let q = Mat::from_diagonal(&Vector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0]));
        let system = LtiSystem::new(
            crate::leslie::leslie_matrix(&crate::leslie::benchmark_nominal()),
            Mat::identity(5, 5),
            Vector::from_vec(vec![5.0, 0.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let cost = CostSpec::new(q.clone(), Mat::identity(5, 5) * 5.0, q.clone(), 8).unwrap();
        let l = crate::matrix::psd_sqrt(&q).unwrap();
        let value = s2_objective(&l, std::slice::from_ref(&system.f), &system.g, &system.x0, &cost);
        assert_relative_eq!(value, 125.0, epsilon = 1e-9);

        // L = 0 reduces to the open-loop terminal term x_T^T S x_T.
        let value0 = s2_objective(
            &Mat::zeros(5, 5),
            std::slice::from_ref(&system.f),
            &system.g,
            &system.x0,
            &cost,
        );
        let mut x_t = system.x0.clone();
        for _ in 0..8 {
            x_t = &system.f * x_t;
        }
        let expected = (x_t.transpose() * &cost.s * &x_t)[(0, 0)];
        assert_relative_eq!(value0, expected, epsilon = 1e-9 * expected.abs());
    }

    #[test]
    fn robust_single_scenario_equals_deterministic() {
        let (system, cost) = scalar_unstable(8);
        let set = ScenarioSet::new(
            vec![system.f.clone()],
            system.g.clone(),
            system.x0.clone(),
        )
        .unwrap();
        let cfg = NmMethodConfig::default();
        for method in [Method::S1, Method::S2] {
            let det = run_search(
                method,
                std::slice::from_ref(&system.f),
                &system.g,
                &system.x0,
                &cost,
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(77),
                None,
            )
            .unwrap();
            let rob = match method {
                Method::S1 => {
                    s1_solve_robust(&set, &cost, &cfg, &mut ChaCha8Rng::seed_from_u64(77), None)
                        .unwrap()
                }
                _ => s2_solve_robust(&set, &cost, &cfg, &mut ChaCha8Rng::seed_from_u64(77), None)
                    .unwrap(),
            };
            assert_eq!(det.gain, rob.gain);
            assert_eq!(det.cost, rob.cost);
        }
    }

    #[test]
    fn robust_identical_scenarios_match_single() {
        let (system, cost) = scalar_unstable(6);
        let triple = ScenarioSet::new(
            vec![system.f.clone(); 3],
            system.g.clone(),
            system.x0.clone(),
        )
        .unwrap();
        let cfg = NmMethodConfig::default();
        let one = s1_solve(&system, &cost, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let many =
            s1_solve_robust(&triple, &cost, &cfg, &mut ChaCha8Rng::seed_from_u64(4), None).unwrap();
        assert_eq!(one.gain, many.gain);
    }

    #[test]
    fn robust_cost_is_epigraph_consistent() {
        // Worst-case objective at the returned decision equals the reported
        // cost.
        let f_mats = vec![
            Mat::from_element(1, 1, 1.2),
            Mat::from_element(1, 1, 1.8),
            Mat::from_element(1, 1, 0.9),
        ];
        let set = ScenarioSet::new(
            f_mats.clone(),
            Mat::from_element(1, 1, 1.0),
            Vector::from_element(1, 1.0),
        )
        .unwrap();
        let cost = CostSpec::new(
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            6,
        )
        .unwrap();
        let sol = s1_solve_robust(
            &set,
            &cost,
            &NmMethodConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(6),
            None,
        )
        .unwrap();
        let l = match &sol.certificate {
            Some(Certificate::Factor { l }) => l.clone(),
            _ => panic!("expected factor certificate"),
        };
        let worst = s1_objective(&l, &f_mats, &set.g, &set.x0, &cost);
        assert_relative_eq!(sol.cost, worst, epsilon = 1e-9, max_relative = 1e-9);
    }
}
