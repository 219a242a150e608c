//! JSON experiment configuration.
//!
//! Every field is optional in the file; omitted values fall back to the
//! benchmark defaults of each experiment. Unknown fields are rejected.
//! Matrices are row-major nested arrays of IEEE doubles.

use std::path::Path;

use serde::Deserialize;

use stablqr::lqr::{CostSpec, LtiSystem};
use stablqr::matrix::{Mat, Vector};
use stablqr::opt::LbfgsConfig;
use stablqr::stability::{BarrierConfig, NmMethodConfig, S0Config, SolverConfig};

use crate::CliError;

/// Benchmark method selector (the stability solvers plus the classic
/// time-varying optimum).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Classic,
    S0,
    S1,
    S2,
    SInf,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 5] = [
        BenchMethod::Classic,
        BenchMethod::S0,
        BenchMethod::S1,
        BenchMethod::S2,
        BenchMethod::SInf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Classic => "classic",
            BenchMethod::S0 => "s0",
            BenchMethod::S1 => "s1",
            BenchMethod::S2 => "s2",
            BenchMethod::SInf => "sinf",
        }
    }

    /// RNG stream purpose of this method; stream ids are
    /// `trial * 16 + purpose` so draws never shift across method subsets.
    pub fn stream_purpose(self) -> u64 {
        match self {
            BenchMethod::Classic => 1,
            BenchMethod::S0 => 2,
            BenchMethod::S1 => 3,
            BenchMethod::S2 => 4,
            BenchMethod::SInf => 5,
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classic" => Ok(BenchMethod::Classic),
            "s0" => Ok(BenchMethod::S0),
            "s1" => Ok(BenchMethod::S1),
            "s2" => Ok(BenchMethod::S2),
            "sinf" | "s_inf" | "s∞" => Ok(BenchMethod::SInf),
            other => Err(CliError::Config(format!(
                "unknown method '{other}' (expected classic, s0, s1, s2, sinf)"
            ))),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>, CliError> {
        let methods = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Self::parse)
            .collect::<Result<Vec<_>, _>>()?;
        if methods.is_empty() {
            return Err(CliError::Config("empty method list".into()));
        }
        Ok(methods)
    }
}

/// RNG stream purposes that are not tied to one method.
pub mod stream {
    /// System/scenario sampling.
    pub const SAMPLING: u64 = 0;
    /// Fresh validation samples.
    pub const FRESH: u64 = 6;

    pub fn id(trial: u64, purpose: u64) -> u64 {
        trial * 16 + purpose
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Must match the subcommand when present.
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub horizon: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub method: Option<String>,
    pub cost: Option<CostSection>,
    pub system: Option<SystemSection>,
    pub leslie: Option<LeslieSection>,
    pub scenario: Option<ScenarioSection>,
    pub solver: Option<SolverSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeslieSection {
    pub dim: Option<usize>,
    pub nu_range: Option<[f64; 2]>,
    pub kappa_range: Option<[f64; 2]>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub nominal_nu: Option<Vec<f64>>,
    pub nominal_kappa: Option<Vec<f64>>,
    pub delta_lower: Option<f64>,
    pub delta_upper: Option<f64>,
    pub n_scenarios: Option<usize>,
    pub beta: Option<f64>,
    pub fresh_samples: Option<usize>,
    /// Relative tolerance deciding "solution unchanged" in the support
    /// subsample extraction.
    pub unchanged_tol: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub s0: Option<S0Section>,
    pub nm: Option<NmSection>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct S0Section {
    pub xi: Option<f64>,
    pub mu: Option<f64>,
    pub max_outer: Option<usize>,
    pub k_tol: Option<f64>,
    pub init_scale: Option<f64>,
    pub lbfgs_memory: Option<usize>,
    pub lbfgs_max_iterations: Option<usize>,
    pub lbfgs_armijo_c: Option<f64>,
    pub barrier_mu_init: Option<f64>,
    pub barrier_mu_factor: Option<f64>,
    pub barrier_mu_min: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NmSection {
    pub init_scale: Option<f64>,
    pub evals_per_variable: Option<usize>,
    pub f_tol: Option<f64>,
    pub x_tol: Option<f64>,
    pub initial_step: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<String>,
    pub format: Option<String>,
    /// When false the time_ms column is written as zero so reruns are
    /// byte-identical.
    pub timing: Option<bool>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        Self {
            experiment: None,
            seed: None,
            trials: None,
            horizon: None,
            methods: None,
            method: None,
            cost: None,
            system: None,
            leslie: None,
            scenario: None,
            solver: None,
            output: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn check_experiment(&self, expected: &str) -> Result<(), CliError> {
        if let Some(kind) = &self.experiment {
            if kind != expected {
                return Err(CliError::Config(format!(
                    "config is for experiment '{kind}' but the '{expected}' subcommand was invoked"
                )));
            }
        }
        Ok(())
    }
}

fn mat_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Mat, CliError> {
    if rows.is_empty() {
        return Err(CliError::Config(format!("{what}: empty matrix")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!("{what}: ragged or empty rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{what}: non-finite entry")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Mat::from_row_slice(rows.len(), cols, &flat))
}

fn vec_from(values: &[f64], what: &str) -> Result<Vector, CliError> {
    if values.is_empty() {
        return Err(CliError::Config(format!("{what}: empty vector")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("{what}: non-finite entry")));
    }
    Ok(Vector::from_column_slice(values))
}

impl CostSection {
    pub fn build(&self, horizon: usize) -> Result<CostSpec, CliError> {
        CostSpec::new(
            mat_from_rows(&self.q, "cost.q")?,
            mat_from_rows(&self.r, "cost.r")?,
            mat_from_rows(&self.s, "cost.s")?,
            horizon,
        )
        .map_err(|e| CliError::Config(format!("cost: {e}")))
    }
}

impl SystemSection {
    pub fn build(&self) -> Result<LtiSystem, CliError> {
        LtiSystem::new(
            mat_from_rows(&self.f, "system.f")?,
            mat_from_rows(&self.g, "system.g")?,
            vec_from(&self.x0, "system.x0")?,
        )
        .map_err(|e| CliError::Config(format!("system: {e}")))
    }
}

impl SolverSection {
    pub fn build(&self) -> SolverConfig {
        let s0s = self.s0.clone().unwrap_or_default();
        let nms = self.nm.clone().unwrap_or_default();
        let s0_default = S0Config::default();
        let lbfgs_default = LbfgsConfig::default();
        let barrier_default = BarrierConfig::default();
        let nm_default = NmMethodConfig::default();
        SolverConfig {
            s0: S0Config {
                xi: s0s.xi.unwrap_or(s0_default.xi),
                mu: s0s.mu.unwrap_or(s0_default.mu),
                max_outer: s0s.max_outer.unwrap_or(s0_default.max_outer),
                k_tol: s0s.k_tol.unwrap_or(s0_default.k_tol),
                obj_tol: s0_default.obj_tol,
                init_scale: s0s.init_scale.unwrap_or(s0_default.init_scale),
                lbfgs: LbfgsConfig {
                    memory: s0s.lbfgs_memory.unwrap_or(lbfgs_default.memory),
                    max_iterations: s0s
                        .lbfgs_max_iterations
                        .unwrap_or(lbfgs_default.max_iterations),
                    armijo_c: s0s.lbfgs_armijo_c.unwrap_or(lbfgs_default.armijo_c),
                    ..lbfgs_default
                },
                barrier: BarrierConfig {
                    mu_init: s0s.barrier_mu_init.unwrap_or(barrier_default.mu_init),
                    mu_factor: s0s.barrier_mu_factor.unwrap_or(barrier_default.mu_factor),
                    mu_min: s0s.barrier_mu_min.unwrap_or(barrier_default.mu_min),
                    ..barrier_default
                },
            },
            nm: NmMethodConfig {
                init_scale: nms.init_scale.unwrap_or(nm_default.init_scale),
                evals_per_variable: nms
                    .evals_per_variable
                    .unwrap_or(nm_default.evals_per_variable),
                f_tol: nms.f_tol.unwrap_or(nm_default.f_tol),
                x_tol: nms.x_tol.unwrap_or(nm_default.x_tol),
                initial_step: nms.initial_step.unwrap_or(nm_default.initial_step),
                warm_initial_step: nm_default.warm_initial_step,
            },
        }
    }
}

/// Output format of the record stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutFormat {
    Csv,
    Json,
}

impl OutFormat {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutFormat::Csv),
            "json" => Ok(OutFormat::Json),
            other => Err(CliError::Config(format!(
                "unknown format '{other}' (expected csv or json)"
            ))),
        }
    }
}

fn parse_methods_config(names: &[String]) -> Result<Vec<BenchMethod>, CliError> {
    let mut out = Vec::new();
    for name in names {
        out.push(BenchMethod::parse(name)?);
    }
    if out.is_empty() {
        return Err(CliError::Config("empty method list".into()));
    }
    Ok(out)
}

/// Fully resolved Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct MontecarloPlan {
    pub seed: u64,
    pub trials: usize,
    pub methods: Vec<BenchMethod>,
    pub dim: usize,
    pub nu_range: (f64, f64),
    pub kappa_range: (f64, f64),
    pub x0: Vector,
    pub q: Mat,
    pub r: Mat,
    pub s: Mat,
    pub horizon: usize,
    pub solver: SolverConfig,
}

/// Fully resolved fixed-system experiment with random solver restarts.
#[derive(Debug, Clone)]
pub struct NondetectablePlan {
    pub seed: u64,
    pub trials: usize,
    pub methods: Vec<BenchMethod>,
    pub system: LtiSystem,
    pub cost: CostSpec,
    pub solver: SolverConfig,
}

/// Fully resolved scenario-robustness experiment.
#[derive(Debug, Clone)]
pub struct ScenarioPlan {
    pub seed: u64,
    pub methods: Vec<BenchMethod>,
    pub nominal_nu: Vec<f64>,
    pub nominal_kappa: Vec<f64>,
    pub delta_bounds: (f64, f64),
    pub n_scenarios: usize,
    pub beta: f64,
    pub fresh_samples: usize,
    pub unchanged_tol: f64,
    pub x0: Vector,
    pub q: Mat,
    pub r: Mat,
    pub s: Mat,
    pub horizon: usize,
    pub solver: SolverConfig,
}

/// Fully resolved single solve.
#[derive(Debug, Clone)]
pub struct SinglePlan {
    pub seed: u64,
    pub method: BenchMethod,
    pub system: LtiSystem,
    pub cost: CostSpec,
    pub solver: SolverConfig,
}

fn default_weights_5() -> (Mat, Mat, Mat) {
    let q = Mat::from_diagonal(&Vector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0]));
    let r = Mat::identity(5, 5) * 5.0;
    let s = q.clone();
    (q, r, s)
}

fn default_x0_5() -> Vector {
    Vector::from_vec(vec![5.0, 0.0, 0.0, 0.0, 0.0])
}

const DEFAULT_SEED: u64 = 2026;

impl MontecarloPlan {
    pub fn resolve(cfg: &ConfigFile) -> Result<Self, CliError> {
        cfg.check_experiment("montecarlo")?;
        let dim = cfg.leslie.as_ref().and_then(|l| l.dim).unwrap_or(5);
        let horizon = cfg.horizon.unwrap_or(8);
        let (q, r, s) = match &cfg.cost {
            Some(c) => {
                let spec = c.build(horizon)?;
                (spec.q, spec.r, spec.s)
            }
            None if dim == 5 => default_weights_5(),
            None => {
                return Err(CliError::Config(
                    "cost matrices are required when leslie.dim != 5".into(),
                ))
            }
        };
        let x0 = match cfg.leslie.as_ref().and_then(|l| l.x0.clone()) {
            Some(v) => vec_from(&v, "leslie.x0")?,
            None if dim == 5 => default_x0_5(),
            None => {
                return Err(CliError::Config(
                    "leslie.x0 is required when leslie.dim != 5".into(),
                ))
            }
        };
        let plan = Self {
            seed: cfg.seed.unwrap_or(DEFAULT_SEED),
            trials: cfg.trials.unwrap_or(100),
            methods: match &cfg.methods {
                Some(m) => parse_methods_config(m)?,
                None => BenchMethod::ALL.to_vec(),
            },
            dim,
            nu_range: cfg
                .leslie
                .as_ref()
                .and_then(|l| l.nu_range)
                .map(|[a, b]| (a, b))
                .unwrap_or((0.0, 4.0)),
            kappa_range: cfg
                .leslie
                .as_ref()
                .and_then(|l| l.kappa_range)
                .map(|[a, b]| (a, b))
                .unwrap_or((0.0, 1.0)),
            x0,
            q,
            r,
            s,
            horizon,
            solver: cfg.solver.clone().unwrap_or_default().build(),
        };
        plan.validate()?;
        Ok(plan)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if self.x0.len() != self.dim || self.q.nrows() != self.dim {
            return Err(CliError::Config(
                "leslie.dim, x0 and cost dimensions disagree".into(),
            ));
        }
        if !(self.nu_range.0 <= self.nu_range.1 && self.kappa_range.0 <= self.kappa_range.1) {
            return Err(CliError::Config("sampling ranges are inverted".into()));
        }
        Ok(())
    }

    pub fn cost_spec(&self) -> Result<CostSpec, CliError> {
        CostSpec::new(self.q.clone(), self.r.clone(), self.s.clone(), self.horizon)
            .map_err(|e| CliError::Config(format!("cost: {e}")))
    }
}

impl NondetectablePlan {
    pub fn resolve(cfg: &ConfigFile) -> Result<Self, CliError> {
        cfg.check_experiment("nondetectable")?;
        let horizon = cfg.horizon.unwrap_or(8);
        let system = match &cfg.system {
            Some(s) => s.build()?,
            None => LtiSystem::new(
                Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
                Mat::from_column_slice(2, 1, &[1.0, 1.0]),
                Vector::from_vec(vec![1.0, 0.0]),
            )
            .expect("benchmark system is valid"),
        };
        let cost = match &cfg.cost {
            Some(c) => c.build(horizon)?,
            None => CostSpec::new(
                Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                Mat::identity(1, 1),
                Mat::identity(2, 2),
                horizon,
            )
            .expect("benchmark cost is valid"),
        };
        if cost.q.nrows() != system.state_dim() || cost.r.nrows() != system.input_dim() {
            return Err(CliError::Config(
                "system and cost dimensions disagree".into(),
            ));
        }
        Ok(Self {
            seed: cfg.seed.unwrap_or(DEFAULT_SEED),
            trials: cfg.trials.unwrap_or(100),
            methods: match &cfg.methods {
                Some(m) => parse_methods_config(m)?,
                None => vec![
                    BenchMethod::S0,
                    BenchMethod::S1,
                    BenchMethod::S2,
                    BenchMethod::SInf,
                ],
            },
            system,
            cost,
            solver: cfg.solver.clone().unwrap_or_default().build(),
        })
    }
}

impl ScenarioPlan {
    pub fn resolve(cfg: &ConfigFile) -> Result<Self, CliError> {
        cfg.check_experiment("scenario")?;
        let horizon = cfg.horizon.unwrap_or(8);
        let sc = cfg.scenario.clone().unwrap_or(ScenarioSection {
            nominal_nu: None,
            nominal_kappa: None,
            delta_lower: None,
            delta_upper: None,
            n_scenarios: None,
            beta: None,
            fresh_samples: None,
            unchanged_tol: None,
            x0: None,
        });
        let nominal_nu = sc
            .nominal_nu
            .unwrap_or_else(|| vec![1.11, 2.05, 1.79, 2.37, 1.10]);
        let nominal_kappa = sc.nominal_kappa.unwrap_or_else(|| vec![0.97, 0.86, 0.37, 0.09]);
        let dim = nominal_nu.len();
        let (q, r, s) = match &cfg.cost {
            Some(c) => {
                let spec = c.build(horizon)?;
                (spec.q, spec.r, spec.s)
            }
            None if dim == 5 => default_weights_5(),
            None => {
                return Err(CliError::Config(
                    "cost matrices are required for non-default model dimension".into(),
                ))
            }
        };
        let x0 = match sc.x0 {
            Some(v) => vec_from(&v, "scenario.x0")?,
            None if dim == 5 => default_x0_5(),
            None => {
                return Err(CliError::Config(
                    "scenario.x0 is required for non-default model dimension".into(),
                ))
            }
        };
        let beta = sc.beta.unwrap_or(0.05);
        if !(beta > 0.0 && beta < 1.0) {
            return Err(CliError::Config(format!(
                "beta = {beta} must lie in (0, 1)"
            )));
        }
        let delta_bounds = (sc.delta_lower.unwrap_or(-0.4), sc.delta_upper.unwrap_or(0.4));
        if delta_bounds.0 > delta_bounds.1 {
            return Err(CliError::Config("delta bounds are inverted".into()));
        }
        Ok(Self {
            seed: cfg.seed.unwrap_or(DEFAULT_SEED),
            methods: match &cfg.methods {
                Some(m) => parse_methods_config(m)?,
                None => vec![
                    BenchMethod::S0,
                    BenchMethod::S1,
                    BenchMethod::S2,
                    BenchMethod::SInf,
                ],
            },
            nominal_nu,
            nominal_kappa,
            delta_bounds,
            n_scenarios: sc.n_scenarios.unwrap_or(50),
            beta,
            fresh_samples: sc.fresh_samples.unwrap_or(100),
            unchanged_tol: sc.unchanged_tol.unwrap_or(1e-3),
            x0,
            q,
            r,
            s,
            horizon,
            solver: cfg.solver.clone().unwrap_or_default().build(),
        })
    }

    pub fn cost_spec(&self) -> Result<CostSpec, CliError> {
        CostSpec::new(self.q.clone(), self.r.clone(), self.s.clone(), self.horizon)
            .map_err(|e| CliError::Config(format!("cost: {e}")))
    }
}

impl SinglePlan {
    pub fn resolve(cfg: &ConfigFile, method_flag: Option<&str>) -> Result<Self, CliError> {
        cfg.check_experiment("solve")?;
        let method_name = method_flag
            .map(str::to_string)
            .or_else(|| cfg.method.clone())
            .ok_or_else(|| CliError::Config("solve requires a method".into()))?;
        let system = cfg
            .system
            .as_ref()
            .ok_or_else(|| CliError::Config("solve requires explicit system matrices".into()))?
            .build()?;
        let horizon = cfg
            .horizon
            .ok_or_else(|| CliError::Config("solve requires a horizon".into()))?;
        let cost = cfg
            .cost
            .as_ref()
            .ok_or_else(|| CliError::Config("solve requires explicit cost matrices".into()))?
            .build(horizon)?;
        if cost.q.nrows() != system.state_dim() || cost.r.nrows() != system.input_dim() {
            return Err(CliError::Config(
                "system and cost dimensions disagree".into(),
            ));
        }
        Ok(Self {
            seed: cfg.seed.unwrap_or(DEFAULT_SEED),
            method: BenchMethod::parse(&method_name)?,
            system,
            cost,
            solver: cfg.solver.clone().unwrap_or_default().build(),
        })
    }
}
