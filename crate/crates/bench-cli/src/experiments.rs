//! The four benchmark experiments.
//!
//! Trials run concurrently with per-trial RNG streams derived from
//! `(seed, trial, purpose)`, so outputs are identical across reruns and
//! independent of scheduling. Solver failures inside a trial are recorded
//! in the row (`converged = false`) and never abort a run.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use stablqr::leslie::{self, LeslieParams, UncertaintySpec};
use stablqr::lqr::{self, CostSpec, LtiSystem, Policy};
use stablqr::matrix::{self, Mat, Vector};
use stablqr::scenario::{self, ScenarioSet};
use stablqr::stability::{
    self, feedback_from_l, Certificate, Method, SolverConfig, StabilityError,
};

use crate::config::{
    stream, BenchMethod, MontecarloPlan, NondetectablePlan, ScenarioPlan, SinglePlan,
};
use crate::records::{
    median, MethodSummary, RobustnessEntry, RobustnessReport, TrialRecord,
};
use crate::CliError;

fn rng_for(seed: u64, trial: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream::id(trial, purpose));
    rng
}

fn gain_rows(k: &Mat) -> Vec<Vec<f64>> {
    (0..k.nrows())
        .map(|i| (0..k.ncols()).map(|j| k[(i, j)]).collect())
        .collect()
}

/// Classic finite-horizon optimum: `J* = x0^T M_0 x0`; the reported closed
/// loop is the one induced by the last sweep gain `K_{T-1}`, which is the
/// gain a constant-feedback continuation would inherit.
fn classic_record(
    trial: usize,
    system: &LtiSystem,
    cost: &CostSpec,
    rho_open: f64,
    j_star: f64,
) -> Result<TrialRecord, StabilityError> {
    let started = Instant::now();
    let sweep = lqr::dre_sweep(system, cost)?;
    let last_gain = sweep.gains[cost.horizon - 1].clone();
    let rho_closed =
        matrix::spectral_radius(&(&system.f + &system.g * &last_gain))?;
    Ok(TrialRecord {
        trial,
        method: BenchMethod::Classic.name().into(),
        rho_open,
        rho_closed,
        j: j_star,
        j_star,
        rel_gap: 0.0,
        time_ms: started.elapsed().as_secs_f64() * 1e3,
        converged: true,
        epsilon_posterior: None,
        gain: Some(gain_rows(&last_gain)),
        note: None,
    })
}

fn stability_record(
    trial: usize,
    method: BenchMethod,
    outcome: Result<stability::StabilizedSolution, StabilityError>,
    system: &LtiSystem,
    cost: &CostSpec,
    rho_open: f64,
    j_star: f64,
    started: Instant,
) -> Result<TrialRecord, StabilityError> {
    match outcome {
        Ok(sol) => Ok(TrialRecord {
            trial,
            method: method.name().into(),
            rho_open,
            rho_closed: sol.rho_closed,
            j: sol.cost,
            j_star,
            rel_gap: (sol.cost - j_star) / j_star,
            time_ms: started.elapsed().as_secs_f64() * 1e3,
            converged: sol.converged,
            epsilon_posterior: None,
            gain: Some(gain_rows(&sol.gain)),
            note: None,
        }),
        Err(StabilityError::NotDetectable) => {
            // The Riccati route has no answer here; report the open loop.
            let open = lqr::rollout(system, cost, Policy::Constant(&Mat::zeros(
                system.input_dim(),
                system.state_dim(),
            )))?;
            Ok(TrialRecord {
                trial,
                method: method.name().into(),
                rho_open,
                rho_closed: rho_open,
                j: open.cost,
                j_star,
                rel_gap: (open.cost - j_star) / j_star,
                time_ms: started.elapsed().as_secs_f64() * 1e3,
                converged: false,
                epsilon_posterior: None,
                gain: Some(gain_rows(&Mat::zeros(
                    system.input_dim(),
                    system.state_dim(),
                ))),
                note: Some("not_detectable".into()),
            })
        }
        Err(e) => Ok(TrialRecord {
            trial,
            method: method.name().into(),
            rho_open,
            rho_closed: f64::NAN,
            j: f64::NAN,
            j_star,
            rel_gap: f64::NAN,
            time_ms: started.elapsed().as_secs_f64() * 1e3,
            converged: false,
            epsilon_posterior: None,
            gain: None,
            note: Some(format!("solver_failure: {e}")),
        }),
    }
}

fn run_method_on_system(
    trial: usize,
    method: BenchMethod,
    system: &LtiSystem,
    cost: &CostSpec,
    solver: &SolverConfig,
    seed: u64,
    rho_open: f64,
    j_star: f64,
) -> Result<TrialRecord, StabilityError> {
    if method == BenchMethod::Classic {
        return classic_record(trial, system, cost, rho_open, j_star);
    }
    let started = Instant::now();
    let mut rng = rng_for(seed, trial as u64, method.stream_purpose());
    let outcome = match method {
        BenchMethod::S0 => stability::s0_solve(system, cost, &solver.s0, &mut rng),
        BenchMethod::S1 => stability::s1_solve(system, cost, &solver.nm, &mut rng),
        BenchMethod::S2 => stability::s2_solve(system, cost, &solver.nm, &mut rng),
        BenchMethod::SInf => stability::sinf_solve(system, cost),
        BenchMethod::Classic => unreachable!(),
    };
    stability_record(trial, method, outcome, system, cost, rho_open, j_star, started)
}

/// Monte Carlo study over randomly sampled Leslie plants.
pub fn run_montecarlo(plan: &MontecarloPlan) -> Result<Vec<TrialRecord>, CliError> {
    let cost = plan.cost_spec()?;
    let records: Vec<Vec<TrialRecord>> = (0..plan.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<TrialRecord>, CliError> {
            let mut sample_rng = rng_for(plan.seed, trial as u64, stream::SAMPLING);
            let params = leslie::sample_random_leslie(
                &mut sample_rng,
                plan.dim,
                plan.nu_range,
                plan.kappa_range,
            )?;
            let f = leslie::leslie_matrix(&params);
            let system = LtiSystem::new(f, Mat::identity(plan.dim, plan.dim), plan.x0.clone())?;
            let rho_open = matrix::spectral_radius(&system.f)?;
            let sweep = lqr::dre_sweep(&system, &cost)?;
            let j_star = (plan.x0.transpose() * &sweep.values[0] * &plan.x0)[(0, 0)];

            let mut rows = Vec::with_capacity(plan.methods.len());
            for &method in &plan.methods {
                rows.push(
                    run_method_on_system(
                        trial, method, &system, &cost, &plan.solver, plan.seed, rho_open, j_star,
                    )
                    .map_err(|e| CliError::Solver(e.to_string()))?,
                );
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(records.into_iter().flatten().collect())
}

/// Repeated random restarts on one fixed (non-detectable) plant.
pub fn run_nondetectable(
    plan: &NondetectablePlan,
) -> Result<(Vec<TrialRecord>, Vec<MethodSummary>), CliError> {
    let system = &plan.system;
    let cost = &plan.cost;
    let rho_open = matrix::spectral_radius(&system.f)?;
    let sweep = lqr::dre_sweep(system, cost)?;
    let j_star = (system.x0.transpose() * &sweep.values[0] * &system.x0)[(0, 0)];

    let records: Vec<Vec<TrialRecord>> = (0..plan.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<TrialRecord>, CliError> {
            let mut rows = Vec::with_capacity(plan.methods.len());
            for &method in &plan.methods {
                rows.push(
                    run_method_on_system(
                        trial, method, system, cost, &plan.solver, plan.seed, rho_open, j_star,
                    )
                    .map_err(|e| CliError::Solver(e.to_string()))?,
                );
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let records: Vec<TrialRecord> = records.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for &method in &plan.methods {
        let rows: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| r.method == method.name())
            .collect();
        let mut gaps: Vec<f64> = rows
            .iter()
            .map(|r| r.rel_gap)
            .filter(|g| g.is_finite())
            .collect();
        let stabilized = rows.iter().filter(|r| r.rho_closed < 1.0).count();
        let note = rows
            .iter()
            .find_map(|r| r.note.clone());
        summaries.push(MethodSummary {
            method: method.name().into(),
            runs: rows.len(),
            stabilized,
            median_rel_gap: median(&mut gaps),
            note,
        });
    }
    Ok((records, summaries))
}

struct RobustOutcome {
    solution: stablqr::stability::StabilizedSolution,
    decision: Vector,
}

fn robust_decision_vector(sol: &stablqr::stability::StabilizedSolution) -> Vector {
    // The compared decision for the searches is L^T L, not L: the induced
    // gains depend on the factor only through that product, and the
    // optimizer drifts freely along the orthogonal orbit L -> UL where the
    // objective is exactly flat.
    match &sol.certificate {
        Some(Certificate::Factor { l }) => matrix::vec_col(&(l.transpose() * l)),
        _ => matrix::vec_col(&sol.gain),
    }
}

fn robust_solve_subset(
    method: BenchMethod,
    scenarios: &ScenarioSet,
    indices: &[usize],
    cost: &CostSpec,
    solver: &SolverConfig,
    seed: u64,
    warm: Option<&RobustOutcome>,
) -> Result<RobustOutcome, StabilityError> {
    let subset = scenarios
        .subset(indices)
        .map_err(|e| StabilityError::NumericalFailure(e.to_string()))?;
    let mut rng = rng_for(seed, 0, method.stream_purpose());
    let core_method = match method {
        BenchMethod::S0 => Method::S0,
        BenchMethod::S1 => Method::S1,
        BenchMethod::S2 => Method::S2,
        BenchMethod::SInf => Method::SInf,
        BenchMethod::Classic => {
            return Err(StabilityError::NumericalFailure(
                "classic is not a robust method".into(),
            ))
        }
    };
    // Re-solve policy: S0 continues from the incumbent (its fixed point is
    // coupled to every scenario through the certificate, and a warm
    // alternation settles immediately when the dropped scenario was
    // inactive). The S1/S2 searches re-solve cold with the same seed: when
    // an inactive scenario is dropped their objective is unchanged at every
    // point the search visits, so the path and the returned factor are
    // bit-identical.
    let warm = match method {
        BenchMethod::S0 => warm.map(|w| &w.solution),
        _ => None,
    };
    let solution =
        stability::robust_solve_warm(core_method, &subset, cost, solver, &mut rng, warm)?;
    let decision = robust_decision_vector(&solution);
    Ok(RobustOutcome { solution, decision })
}

/// Does the decision of `method` stabilize the sampled plant `f`?
fn stabilizes_fresh(
    method: BenchMethod,
    sol: &stablqr::stability::StabilizedSolution,
    f: &Mat,
    g: &Mat,
    r_weight: &Mat,
) -> Result<bool, StabilityError> {
    let gain = match (&sol.certificate, method) {
        (Some(Certificate::Factor { l }), BenchMethod::S1 | BenchMethod::S2) => {
            // The searches carry L; the gain is rebuilt per plant.
            feedback_from_l(l, f, g, r_weight)?
        }
        _ => sol.gain.clone(),
    };
    let rho = matrix::spectral_radius(&(f + g * &gain))?;
    Ok(rho < 1.0)
}

/// Scenario-robustness experiment: train on sampled scenarios, extract the
/// support subsample, and validate on fresh samples.
pub fn run_scenario(
    plan: &ScenarioPlan,
) -> Result<(Vec<TrialRecord>, RobustnessReport), CliError> {
    let cost = plan.cost_spec()?;
    let nominal = LeslieParams::new(plan.nominal_nu.clone(), plan.nominal_kappa.clone())
        .map_err(|e| CliError::Config(format!("nominal model: {e}")))?;
    let spec = UncertaintySpec::uniform(
        nominal.survival.len(),
        plan.delta_bounds.0,
        plan.delta_bounds.1,
    )
    .map_err(|e| CliError::Config(format!("uncertainty: {e}")))?;
    let g = Mat::identity(plan.x0.len(), plan.x0.len());

    let mut sample_rng = rng_for(plan.seed, 0, stream::SAMPLING);
    let (training, _warnings) = leslie::sample_scenarios(
        &nominal,
        &spec,
        plan.n_scenarios,
        g.clone(),
        plan.x0.clone(),
        &mut sample_rng,
    )?;
    let mut fresh_rng = rng_for(plan.seed, 0, stream::FRESH);
    let (fresh, _) = leslie::sample_scenarios(
        &nominal,
        &spec,
        plan.fresh_samples,
        g.clone(),
        plan.x0.clone(),
        &mut fresh_rng,
    )?;

    let rho_open = training
        .f_mats
        .iter()
        .map(matrix::spectral_radius)
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    // Worst-case classic optimum over the training scenarios.
    let mut j_star = f64::NEG_INFINITY;
    for i in 0..training.len() {
        let system = training.system(i)?;
        let sweep = lqr::dre_sweep(&system, &cost)?;
        j_star = j_star.max((plan.x0.transpose() * &sweep.values[0] * &plan.x0)[(0, 0)]);
    }

    let mut records = Vec::new();
    let mut entries = Vec::new();
    for &method in &plan.methods {
        if method == BenchMethod::Classic {
            return Err(CliError::Config(
                "the scenario experiment runs robust methods only (s0, s1, s2, sinf)".into(),
            ));
        }
        let started = Instant::now();
        let all: Vec<usize> = (0..plan.n_scenarios).collect();
        let full =
            robust_solve_subset(method, &training, &all, &cost, &plan.solver, plan.seed, None)
                .map_err(|e| {
                    CliError::Solver(format!("{} on full scenario set: {e}", method.name()))
                })?;

        let epsilon_n = full
            .solution
            .retained_scenarios
            .unwrap_or(plan.n_scenarios);
        let support = scenario::greedy_support_subsample(
            plan.n_scenarios,
            |idx: &[usize], warm: Option<&RobustOutcome>| -> Result<RobustOutcome, CliError> {
                robust_solve_subset(method, &training, idx, &cost, &plan.solver, plan.seed, warm)
                    .map_err(|e| CliError::Solver(e.to_string()))
            },
            |outcome: &RobustOutcome| outcome.decision.clone(),
            plan.unchanged_tol,
            epsilon_n,
            plan.beta,
        )?;

        let violation = scenario::validate_violation(&fresh.f_mats, |f| {
            !stabilizes_fresh(method, &full.solution, f, &g, &cost.r).unwrap_or(false)
        });

        records.push(TrialRecord {
            trial: 0,
            method: method.name().into(),
            rho_open,
            rho_closed: full.solution.rho_closed,
            j: full.solution.cost,
            j_star,
            rel_gap: (full.solution.cost - j_star) / j_star,
            time_ms: started.elapsed().as_secs_f64() * 1e3,
            converged: full.solution.converged,
            epsilon_posterior: Some(support.epsilon),
            gain: Some(gain_rows(&full.solution.gain)),
            note: None,
        });
        entries.push(RobustnessEntry {
            method: method.name().into(),
            support_cardinality: support.cardinality,
            support_indices: support.indices,
            epsilon_posterior: support.epsilon,
            scenarios_retained: epsilon_n,
            fresh_samples: plan.fresh_samples,
            fresh_violation_rate: violation,
        });
    }

    Ok((
        records,
        RobustnessReport {
            n_scenarios: plan.n_scenarios,
            beta: plan.beta,
            entries,
        },
    ))
}

/// Report of a single solve, printed as JSON by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub method: String,
    pub rho_open: f64,
    pub rho_closed: f64,
    pub cost: f64,
    pub j_star: f64,
    pub converged: bool,
    pub iterations: usize,
    pub time_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_sequence: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateReport>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertificateReport {
    Lmi {
        p: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
        xi: f64,
    },
    Are {
        m_inf: Vec<Vec<f64>>,
    },
    Factor {
        l: Vec<Vec<f64>>,
    },
}

impl CertificateReport {
    fn from_certificate(cert: &Certificate) -> Self {
        match cert {
            Certificate::Lmi(lmi) => CertificateReport::Lmi {
                p: gain_rows(&lmi.p),
                c: gain_rows(&lmi.c),
                d: gain_rows(&lmi.d),
                xi: lmi.xi,
            },
            Certificate::Are(are) => CertificateReport::Are {
                m_inf: gain_rows(&are.m_inf),
            },
            Certificate::Factor { l } => CertificateReport::Factor { l: gain_rows(l) },
        }
    }
}

/// One explicit solve. A not-detectable verdict surfaces as
/// [`CliError::NotDetectable`] so the CLI can exit with its dedicated code.
pub fn run_single(plan: &SinglePlan) -> Result<SolveReport, CliError> {
    let system = &plan.system;
    let cost = &plan.cost;
    let rho_open = matrix::spectral_radius(&system.f)?;
    let sweep = lqr::dre_sweep(system, cost)?;
    let j_star = (system.x0.transpose() * &sweep.values[0] * &system.x0)[(0, 0)];
    let started = Instant::now();

    if plan.method == BenchMethod::Classic {
        let rho_closed = matrix::spectral_radius(
            &(&system.f + &system.g * &sweep.gains[cost.horizon - 1]),
        )?;
        return Ok(SolveReport {
            method: "classic".into(),
            rho_open,
            rho_closed,
            cost: j_star,
            j_star,
            converged: true,
            iterations: cost.horizon,
            time_ms: started.elapsed().as_secs_f64() * 1e3,
            gain: None,
            gain_sequence: Some(sweep.gains.iter().map(gain_rows).collect()),
            certificate: None,
        });
    }

    let mut rng = rng_for(plan.seed, 0, plan.method.stream_purpose());
    let solution = match plan.method {
        BenchMethod::S0 => stability::s0_solve(system, cost, &plan.solver.s0, &mut rng)?,
        BenchMethod::S1 => stability::s1_solve(system, cost, &plan.solver.nm, &mut rng)?,
        BenchMethod::S2 => stability::s2_solve(system, cost, &plan.solver.nm, &mut rng)?,
        BenchMethod::SInf => stability::sinf_solve(system, cost)?,
        BenchMethod::Classic => unreachable!(),
    };
    Ok(SolveReport {
        method: plan.method.name().into(),
        rho_open,
        rho_closed: solution.rho_closed,
        cost: solution.cost,
        j_star,
        converged: solution.converged,
        iterations: solution.iterations,
        time_ms: started.elapsed().as_secs_f64() * 1e3,
        gain: Some(gain_rows(&solution.gain)),
        gain_sequence: None,
        certificate: solution
            .certificate
            .as_ref()
            .map(CertificateReport::from_certificate),
    })
}
