//! Scenario-approach machinery: a-priori sample bounds, a-posteriori
//! violation levels, the convex minimax LQR solver over sampled system
//! matrices, and the greedy irreducible support-subsample extraction.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::lqr::{self, CostSpec, InputSequence, LqrError, LtiSystem};
use crate::matrix::{self, Mat, MatrixError, Vector};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parameter {name} = {value} must lie in the open interval (0, 1)")]
    OutOfOpenInterval { name: &'static str, value: f64 },
    #[error("decision-variable count must be at least 1")]
    EmptyDecision,
    #[error("scenario index k = {k} exceeds sample count n = {n}")]
    BadSupportIndex { k: usize, n: usize },
    #[error("scenario set must contain at least one system")]
    EmptyScenarioSet,
    #[error("scenario matrices disagree in dimension: {0}")]
    Dimension(String),
    #[error("minimax solver did not certify KKT conditions (residual {residual:.3e} > {tol:.3e})")]
    KktNotCertified { residual: f64, tol: f64 },
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Sampling provenance carried alongside a scenario set.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub delta_bounds: Option<Vec<(f64, f64)>>,
}

/// `N` sampled state matrices sharing one input matrix and initial state.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub f_mats: Vec<Mat>,
    pub g: Mat,
    pub x0: Vector,
    pub provenance: Provenance,
}

impl ScenarioSet {
    pub fn new(f_mats: Vec<Mat>, g: Mat, x0: Vector) -> Result<Self, ScenarioError> {
        if f_mats.is_empty() {
            return Err(ScenarioError::EmptyScenarioSet);
        }
        let n = g.nrows();
        for (i, f) in f_mats.iter().enumerate() {
            if f.nrows() != n || f.ncols() != n {
                return Err(ScenarioError::Dimension(format!(
                    "scenario {i} is {}x{}, expected {n}x{n}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        if x0.len() != n {
            return Err(ScenarioError::Dimension(format!(
                "initial state has length {}, expected {n}",
                x0.len()
            )));
        }
        Ok(Self {
            f_mats,
            g,
            x0,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.f_mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_mats.is_empty()
    }

    /// The plant realized by scenario `i`.
    pub fn system(&self, i: usize) -> Result<LtiSystem, LqrError> {
        LtiSystem::new(self.f_mats[i].clone(), self.g.clone(), self.x0.clone())
    }

    /// Restriction to the given scenario indices (order preserved).
    pub fn subset(&self, indices: &[usize]) -> Result<Self, ScenarioError> {
        let f_mats = indices.iter().map(|&i| self.f_mats[i].clone()).collect();
        Ok(Self {
            f_mats,
            g: self.g.clone(),
            x0: self.x0.clone(),
            provenance: self.provenance.clone(),
        })
    }
}

/// Violation level, confidence, and decision dimension for the a-priori
/// scenario bound.
#[derive(Debug, Clone, Copy)]
pub struct RobustnessBudget {
    pub epsilon: f64,
    pub beta: f64,
    pub dimension: usize,
}

impl RobustnessBudget {
    pub fn new(epsilon: f64, beta: f64, dimension: usize) -> Result<Self, ScenarioError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ScenarioError::OutOfOpenInterval {
                name: "epsilon",
                value: epsilon,
            });
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(ScenarioError::OutOfOpenInterval {
                name: "beta",
                value: beta,
            });
        }
        if dimension == 0 {
            return Err(ScenarioError::EmptyDecision);
        }
        Ok(Self {
            epsilon,
            beta,
            dimension,
        })
    }
}

/// Smallest `N` with `N >= (2/eps) (ln(1/beta) + d - 1)`.
pub fn required_scenarios(budget: &RobustnessBudget) -> usize {
    let raw = (2.0 / budget.epsilon)
        * ((1.0 / budget.beta).ln() + budget.dimension as f64 - 1.0);
    raw.ceil().max(1.0) as usize
}

/// A-posteriori violation level for a support subsample of cardinality `k`
/// out of `n` scenarios at confidence `beta`:
/// `1 - (beta / (n * C(n,k)))^(1/(n-k))`, and exactly 1 at `k = n`.
pub fn epsilon_posterior(k: usize, n: usize, beta: f64) -> Result<f64, ScenarioError> {
    if k > n {
        return Err(ScenarioError::BadSupportIndex { k, n });
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ScenarioError::OutOfOpenInterval {
            name: "beta",
            value: beta,
        });
    }
    if k == n {
        return Ok(1.0);
    }
    let nf = n as f64;
    let kf = k as f64;
    let ln_binom = ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0);
    let ln_arg = beta.ln() - nf.ln() - ln_binom;
    Ok(1.0 - (ln_arg / (nf - kf)).exp())
}

/// Output of the convex scenario LQR program
/// `min_{u, alpha} alpha  s.t.  u^T B_i u + 2 a_i^T u + c_i <= alpha`,
/// where `c_i` is scenario `i`'s input-free cost, so `alpha` bounds the true
/// per-scenario rollout cost.
#[derive(Debug, Clone)]
pub struct ScenarioLqrSolution {
    pub inputs: InputSequence,
    pub alpha: f64,
    /// Indices of the binding constraints.
    pub active: Vec<usize>,
    /// Simplex multipliers aligned with `active`.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
}

/// Per-scenario quadratic cost data `q_i(u) = u^T B_i u + 2 a_i^T u + c_i`.
struct QuadConstraint {
    b: Mat,
    a: Vector,
    c: f64,
}

impl QuadConstraint {
    fn value(&self, u: &Vector) -> f64 {
        (u.transpose() * &self.b * u)[(0, 0)] + 2.0 * self.a.dot(u) + self.c
    }

    fn gradient(&self, u: &Vector) -> Vector {
        2.0 * (&self.b * u + &self.a)
    }
}

/// Solves the epigraph program over the stacked input vector.
///
/// The pointwise max of the per-scenario quadratics is minimized by Newton
/// steps on a log-sum-exp smoothing whose temperature is driven to zero,
/// then polished by Newton iterations on the active-set KKT system. The
/// returned solution carries a certified KKT residual.
pub fn solve_scenario_unconstrained(
    scenarios: &ScenarioSet,
    cost: &CostSpec,
) -> Result<ScenarioLqrSolution, ScenarioError> {
    let n_sc = scenarios.len();
    let m = scenarios.g.ncols();
    let dim = m * cost.horizon;

    let mut quads = Vec::with_capacity(n_sc);
    for i in 0..n_sc {
        let system = scenarios.system(i)?;
        let (b, a) = lqr::build_p1(&system, cost)?;
        let c = lqr::free_response_cost(&system, cost);
        quads.push(QuadConstraint { b, a, c });
    }

    let q_val = |i: usize, u: &Vector| quads[i].value(u);
    let q_grad = |i: usize, u: &Vector| quads[i].gradient(u);

    // Smoothed minimization: phi_tau(u) = tau * log sum exp(q_i(u)/tau).
    let mut u = Vector::zeros(dim);
    let scale = 1.0
        + quads
            .iter()
            .map(|q| q.a.amax().max(q.c.abs()))
            .fold(0.0, f64::max);
    let mut tau = scale.max(1.0);
    let tau_min = 1e-9 * scale;
    let mut weights = vec![1.0 / n_sc as f64; n_sc];
    while tau > tau_min {
        for _ in 0..60 {
            let vals: Vec<f64> = (0..n_sc).map(|i| q_val(i, &u)).collect();
            let vmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = vals.iter().map(|v| ((v - vmax) / tau).exp()).collect();
            let z: f64 = exps.iter().sum();
            weights = exps.iter().map(|e| e / z).collect();

            let mut grad = Vector::zeros(dim);
            let mut hess = Mat::zeros(dim, dim);
            let mut mean_grad = Vector::zeros(dim);
            for (i, &w) in weights.iter().enumerate() {
                if w < 1e-300 {
                    continue;
                }
                let gi = q_grad(i, &u);
                grad += &gi * w;
                hess += &quads[i].b * (2.0 * w);
                hess += (&gi * gi.transpose()) * (w / tau);
                mean_grad += &gi * w;
            }
            hess -= (&mean_grad * mean_grad.transpose()) * (1.0 / tau);
            hess += Mat::identity(dim, dim) * (1e-12 * scale);

            if grad.norm() <= 1e-11 * scale {
                break;
            }
            let step = match matrix::solve_vec(&hess, &(-&grad)) {
                Ok(s) => s,
                Err(_) => -&grad * (1e-3 / (1.0 + grad.norm())),
            };
            // Backtrack on the smoothed objective.
            let phi = |uu: &Vector| -> f64 {
                let vals: Vec<f64> = (0..n_sc).map(|i| q_val(i, uu)).collect();
                let vmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                vmax + tau * vals.iter().map(|v| ((v - vmax) / tau).exp()).sum::<f64>().ln()
            };
            let f0 = phi(&u);
            let slope = grad.dot(&step);
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..50 {
                let cand = &u + &step * alpha;
                if phi(&cand) <= f0 + 1e-4 * alpha * slope {
                    u = cand;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        tau *= 0.1;
    }

    // Active set from the smoothed solution.
    let vals: Vec<f64> = (0..n_sc).map(|i| q_val(i, &u)).collect();
    let alpha_hat = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let act_tol = 1e-6 * (1.0 + alpha_hat.abs());
    let mut active: Vec<usize> = (0..n_sc)
        .filter(|&i| vals[i] >= alpha_hat - act_tol)
        .collect();
    if active.is_empty() {
        active.push(0);
    }

    // Polish: Newton on the KKT system of the active constraints.
    let tol = 1e-7 * (1.0 + alpha_hat.abs());
    for _attempt in 0..n_sc + 1 {
        let na = active.len();
        let mut lambda: Vec<f64> = active
            .iter()
            .map(|&i| weights[i].max(1e-12))
            .collect();
        let norm: f64 = lambda.iter().sum();
        lambda.iter_mut().for_each(|l| *l /= norm);
        let mut alpha_var = alpha_hat;

        for _ in 0..40 {
            // Residuals: stationarity in u, active constraints, multiplier sum.
            let mut r = Vector::zeros(dim + na + 1);
            let mut jac = Mat::zeros(dim + na + 1, dim + na + 1);
            let mut stat = Vector::zeros(dim);
            let mut huu = Mat::zeros(dim, dim);
            for (j, &i) in active.iter().enumerate() {
                let gi = q_grad(i, &u);
                stat += &gi * lambda[j];
                huu += &quads[i].b * (2.0 * lambda[j]);
                r[dim + j] = q_val(i, &u) - alpha_var;
                jac.view_mut((dim + j, 0), (1, dim)).copy_from(&gi.transpose());
                jac[(dim + j, dim + na)] = -1.0;
                jac.view_mut((0, dim + j), (dim, 1)).copy_from(&gi);
                r[dim + na] += lambda[j];
            }
            r.rows_mut(0, dim).copy_from(&stat);
            r[dim + na] -= 1.0;
            jac.view_mut((0, 0), (dim, dim)).copy_from(&huu);
            for jj in dim..dim + na {
                jac[(dim + na, jj)] = 1.0;
            }

            if r.amax() <= 1e-13 * (1.0 + alpha_var.abs()) {
                break;
            }
            let delta = match matrix::solve_vec(&jac, &(-&r)) {
                Ok(d) => d,
                Err(_) => break,
            };
            for idx in 0..dim {
                u[idx] += delta[idx];
            }
            for j in 0..na {
                lambda[j] += delta[dim + j];
            }
            alpha_var += delta[dim + na];
        }

        // Drop constraints whose multiplier went negative and retry.
        if let Some(pos) = lambda.iter().position(|&l| l < -1e-10) {
            if active.len() > 1 {
                active.remove(pos);
                continue;
            }
        }

        let residual = kkt_residual(&quads, &u, alpha_var, &active, &lambda);
        if residual <= tol {
            return Ok(ScenarioLqrSolution {
                inputs: InputSequence::from_stacked(&u, m)?,
                alpha: alpha_var,
                active,
                multipliers: lambda,
                kkt_residual: residual,
            });
        } else {
            return Err(ScenarioError::KktNotCertified { residual, tol });
        }
    }
    Err(ScenarioError::KktNotCertified {
        residual: f64::INFINITY,
        tol,
    })
}

fn kkt_residual(
    quads: &[QuadConstraint],
    u: &Vector,
    alpha: f64,
    active: &[usize],
    lambda: &[f64],
) -> f64 {
    let dim = u.len();
    let mut stat = Vector::zeros(dim);
    let mut comp: f64 = 0.0;
    for (j, &i) in active.iter().enumerate() {
        stat += quads[i].gradient(u) * lambda[j];
        comp = comp.max((lambda[j] * (quads[i].value(u) - alpha)).abs());
    }
    let feas = quads
        .iter()
        .map(|q| q.value(u) - alpha)
        .fold(0.0f64, |acc, v| acc.max(v));
    let dual = lambda.iter().copied().fold(0.0f64, |acc, l| acc.max(-l));
    let sum = (lambda.iter().sum::<f64>() - 1.0).abs();
    stat.amax().max(comp).max(feas).max(dual).max(sum)
}

/// An irreducible support subsample plus its a-posteriori violation level.
#[derive(Debug, Clone)]
pub struct SupportSubsample {
    pub indices: Vec<usize>,
    pub cardinality: usize,
    pub epsilon: f64,
}

/// Greedy leave-one-out support-subsample extraction.
///
/// `solve(indices, warm)` must be deterministic for a fixed index set and
/// warm start; re-solves receive the full-sample solution as the warm
/// start, which makes "result unchanged" a continuation question rather
/// than a race between independent solver paths. `decision` projects a
/// solution onto the compared decision vector. Two solutions are
/// "unchanged" when those vectors differ by at most
/// `unchanged_tol * (1 + |full solution|)`.
///
/// A parallel screening pass first solves with each scenario removed and
/// keeps the indices whose removal changes the full-sample solution. When
/// the screened set reproduces the full solution it is taken as the
/// candidate; in degenerate cases (ties, duplicated scenarios) the
/// candidate falls back to the full set. A sequential greedy pass then
/// removes candidates one at a time, keeping the restricted solution equal
/// to the full one, so the result is an irreducible support subsample.
/// `epsilon_n` is the sample count entering the violation level (it may be
/// smaller than `n` when scenarios were discarded upstream).
pub fn greedy_support_subsample<S, E>(
    n: usize,
    solve: impl Fn(&[usize], Option<&S>) -> Result<S, E> + Sync,
    decision: impl Fn(&S) -> Vector + Sync,
    unchanged_tol: f64,
    epsilon_n: usize,
    beta: f64,
) -> Result<SupportSubsample, E>
where
    S: Send + Sync,
    E: Send,
    ScenarioError: Into<E>,
{
    let all: Vec<usize> = (0..n).collect();
    let full = solve(&all, None)?;
    let full_decision = decision(&full);
    let tol = unchanged_tol * (1.0 + full_decision.norm());

    // Leave-one-out screening (parallel; merged in index order).
    let changed: Vec<usize> = all
        .par_iter()
        .map(|&i| {
            let reduced: Vec<usize> = all.iter().copied().filter(|&j| j != i).collect();
            solve(&reduced, Some(&full))
                .map(|sol| ((decision(&sol) - &full_decision).norm() > tol).then_some(i))
        })
        .collect::<Result<Vec<_>, E>>()?
        .into_iter()
        .flatten()
        .collect();

    let screened_ok = !changed.is_empty()
        && (decision(&solve(&changed, Some(&full))?) - &full_decision).norm() <= tol;
    let mut support = if screened_ok {
        changed
    } else {
        // Ties or duplicates: no single removal moved the solution, or the
        // screened set lost constraints that mattered jointly.
        all
    };

    // Irreducibility pass: drop one index at a time while the restricted
    // solution still reproduces the full-sample one.
    let mut k = 0;
    while k < support.len() && support.len() > 1 {
        let trial: Vec<usize> = support
            .iter()
            .copied()
            .filter(|&j| j != support[k])
            .collect();
        let sol = solve(&trial, Some(&full))?;
        if (decision(&sol) - &full_decision).norm() <= tol {
            support.remove(k);
        } else {
            k += 1;
        }
    }

    let epsilon = epsilon_posterior(support.len(), epsilon_n, beta).map_err(Into::into)?;
    Ok(SupportSubsample {
        cardinality: support.len(),
        indices: support,
        epsilon,
    })
}

/// Fraction of samples violating a predicate (Monte Carlo violation rate).
pub fn validate_violation<T>(samples: &[T], violates: impl Fn(&T) -> bool) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| violates(s)).count() as f64 / samples.len() as f64
}
