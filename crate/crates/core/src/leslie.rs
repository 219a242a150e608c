//! Leslie population-model generators: deterministic matrices from
//! fecundity/survival parameters, random model sampling for Monte Carlo
//! studies, and survival-rate perturbation sampling for scenario sets.

use rand::Rng;
use thiserror::Error;

use crate::matrix::{Mat, Vector};
use crate::scenario::{ScenarioError, ScenarioSet};

#[derive(Debug, Error)]
pub enum LeslieError {
    #[error("model needs at least one age class")]
    Empty,
    #[error("expected {expected} survival rates for {classes} classes, got {got}")]
    SurvivalCount {
        expected: usize,
        got: usize,
        classes: usize,
    },
    #[error("fecundity {index} = {value} must be finite and nonnegative")]
    BadFecundity { index: usize, value: f64 },
    #[error("survival rate {index} = {value} must lie in (0, 1)")]
    BadSurvival { index: usize, value: f64 },
    #[error("uncertainty bound {index} has lower {lower} > upper {upper}")]
    BadBound {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("spec carries {got} bounds but the model has {expected} survival rates")]
    BoundCount { expected: usize, got: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Fecundities (first row of the state matrix) and survival rates
/// (subdiagonal) of an age-structured population model.
#[derive(Debug, Clone)]
pub struct LeslieParams {
    pub fecundity: Vec<f64>,
    pub survival: Vec<f64>,
}

impl LeslieParams {
    /// Validates `nu_i >= 0` and `0 < kappa_i < 1` for a nominal model.
    pub fn new(fecundity: Vec<f64>, survival: Vec<f64>) -> Result<Self, LeslieError> {
        if fecundity.is_empty() {
            return Err(LeslieError::Empty);
        }
        if survival.len() + 1 != fecundity.len() {
            return Err(LeslieError::SurvivalCount {
                expected: fecundity.len() - 1,
                got: survival.len(),
                classes: fecundity.len(),
            });
        }
        for (i, &nu) in fecundity.iter().enumerate() {
            if !nu.is_finite() || nu < 0.0 {
                return Err(LeslieError::BadFecundity { index: i, value: nu });
            }
        }
        for (i, &kappa) in survival.iter().enumerate() {
            if !kappa.is_finite() || kappa <= 0.0 || kappa >= 1.0 {
                return Err(LeslieError::BadSurvival {
                    index: i,
                    value: kappa,
                });
            }
        }
        Ok(Self {
            fecundity,
            survival,
        })
    }

    pub fn dim(&self) -> usize {
        self.fecundity.len()
    }
}

/// State matrix of a Leslie model: fecundities across the first row,
/// survival rates on the subdiagonal, zeros elsewhere.
pub fn leslie_matrix(params: &LeslieParams) -> Mat {
    leslie_matrix_raw(&params.fecundity, &params.survival)
}

/// Unvalidated variant used for perturbed scenarios, whose survival rates
/// may leave (0, 1).
pub fn leslie_matrix_raw(fecundity: &[f64], survival: &[f64]) -> Mat {
    let n = fecundity.len();
    let mut f = Mat::zeros(n, n);
    for (j, &nu) in fecundity.iter().enumerate() {
        f[(0, j)] = nu;
    }
    for (i, &kappa) in survival.iter().enumerate() {
        f[(i + 1, i)] = kappa;
    }
    f
}

/// Draws a Leslie model with i.i.d. uniform fecundities and survival rates.
/// Deterministic given the RNG state; invalid boundary draws are resampled.
pub fn sample_random_leslie<R: Rng>(
    rng: &mut R,
    n: usize,
    nu_range: (f64, f64),
    kappa_range: (f64, f64),
) -> Result<LeslieParams, LeslieError> {
    if n == 0 {
        return Err(LeslieError::Empty);
    }
    let draw = |rng: &mut R, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };
    for _ in 0..64 {
        let fecundity: Vec<f64> = (0..n).map(|_| draw(rng, nu_range)).collect();
        let survival: Vec<f64> = (0..n - 1).map(|_| draw(rng, kappa_range)).collect();
        match LeslieParams::new(fecundity, survival) {
            Ok(params) => return Ok(params),
            Err(LeslieError::BadSurvival { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    // Unreachable for ranges inside [0, 1]; surfaces bad caller ranges.
    Err(LeslieError::BadSurvival {
        index: 0,
        value: kappa_range.0,
    })
}

/// Additive uniform perturbation bounds, one interval per survival rate.
#[derive(Debug, Clone)]
pub struct UncertaintySpec {
    pub delta_bounds: Vec<(f64, f64)>,
}

impl UncertaintySpec {
    pub fn new(delta_bounds: Vec<(f64, f64)>) -> Result<Self, LeslieError> {
        for (i, &(lo, hi)) in delta_bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(LeslieError::BadBound {
                    index: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { delta_bounds })
    }

    /// The same interval for every survival rate.
    pub fn uniform(count: usize, lo: f64, hi: f64) -> Result<Self, LeslieError> {
        Self::new(vec![(lo, hi); count])
    }
}

/// A survival rate that left (0, 1) after perturbation. Such scenarios are
/// kept as sampled; clamping would silently change the experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioWarning {
    pub scenario: usize,
    pub class: usize,
    pub value: f64,
}

/// Samples `n_scenarios` perturbed state matrices `F(kappa + delta)` with
/// fecundities held fixed, sharing `g` and `x0`.
pub fn sample_scenarios<R: Rng>(
    nominal: &LeslieParams,
    spec: &UncertaintySpec,
    n_scenarios: usize,
    g: Mat,
    x0: Vector,
    rng: &mut R,
) -> Result<(ScenarioSet, Vec<ScenarioWarning>), LeslieError> {
    if spec.delta_bounds.len() != nominal.survival.len() {
        return Err(LeslieError::BoundCount {
            expected: nominal.survival.len(),
            got: spec.delta_bounds.len(),
        });
    }
    let mut f_mats = Vec::with_capacity(n_scenarios);
    let mut warnings = Vec::new();
    for s in 0..n_scenarios {
        let survival: Vec<f64> = nominal
            .survival
            .iter()
            .zip(&spec.delta_bounds)
            .map(|(&kappa, &(lo, hi))| {
                let delta = if lo == hi { lo } else { rng.gen_range(lo..hi) };
                kappa + delta
            })
            .collect();
        for (i, &kappa) in survival.iter().enumerate() {
            if kappa <= 0.0 || kappa >= 1.0 {
                warnings.push(ScenarioWarning {
                    scenario: s,
                    class: i,
                    value: kappa,
                });
            }
        }
        f_mats.push(leslie_matrix_raw(&nominal.fecundity, &survival));
    }
    let set = ScenarioSet::new(f_mats, g, x0)?;
    Ok((set, warnings))
}

/// Nominal parameters of the perturbed benchmark model
/// (`nu = [1.11, 2.05, 1.79, 2.37, 1.10]`, `kappa = [0.97, 0.86, 0.37, 0.09]`).
pub fn benchmark_nominal() -> LeslieParams {
    LeslieParams::new(
        vec![1.11, 2.05, 1.79, 2.37, 1.10],
        vec![0.97, 0.86, 0.37, 0.09],
    )
    .expect("benchmark parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leslie_matrix_definition() {
        let params = LeslieParams::new(vec![1.0, 2.0], vec![0.5]).unwrap();
        let f = leslie_matrix(&params);
        assert_eq!(f, Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 0.0]));
    }

    #[test]
    fn zero_fecundity_is_nilpotent() {
        // Nilpotent eigenvalues are conditioned like eps^(1/n); the computed
        // radius is tiny but not exactly zero.
        let f = leslie_matrix_raw(&[0.0, 0.0, 0.0], &[0.4, 0.7]);
        assert!(matrix::spectral_radius(&f).unwrap() <= 1e-5);
    }

    #[test]
    fn benchmark_nominal_is_unstable() {
        let f = leslie_matrix(&benchmark_nominal());
        assert_eq!(f.nrows(), 5);
        assert!(matrix::spectral_radius(&f).unwrap() > 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(LeslieParams::new(vec![], vec![]).is_err());
        assert!(LeslieParams::new(vec![1.0, 1.0], vec![]).is_err());
        assert!(LeslieParams::new(vec![-0.1, 1.0], vec![0.5]).is_err());
        assert!(LeslieParams::new(vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(LeslieParams::new(vec![1.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn degenerate_ranges_give_constant_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = sample_random_leslie(&mut rng, 4, (2.0, 2.0), (0.5, 0.5)).unwrap();
        assert!(params.fecundity.iter().all(|&nu| nu == 2.0));
        assert!(params.survival.iter().all(|&kappa| kappa == 0.5));
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_random_leslie(&mut ChaCha8Rng::seed_from_u64(9), 5, (0.0, 4.0), (0.0, 1.0))
            .unwrap();
        let b = sample_random_leslie(&mut ChaCha8Rng::seed_from_u64(9), 5, (0.0, 4.0), (0.0, 1.0))
            .unwrap();
        assert_eq!(a.fecundity, b.fecundity);
        assert_eq!(a.survival, b.survival);
    }

    #[test]
    fn random_models_are_mostly_unstable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut unstable = 0;
        for _ in 0..100 {
            let params = sample_random_leslie(&mut rng, 5, (0.0, 4.0), (0.0, 1.0)).unwrap();
            if matrix::spectral_radius(&leslie_matrix(&params)).unwrap() > 1.0 {
                unstable += 1;
            }
        }
        assert!(unstable > 50, "only {unstable}/100 unstable");
    }

    #[test]
    fn scenario_sampling_respects_bounds_and_warns() {
        let nominal = benchmark_nominal();
        let spec = UncertaintySpec::uniform(4, -0.4, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (set, warnings) = sample_scenarios(
            &nominal,
            &spec,
            50,
            Mat::identity(5, 5),
            Vector::from_vec(vec![5.0, 0.0, 0.0, 0.0, 0.0]),
            &mut rng,
        )
        .unwrap();
        assert_eq!(set.len(), 50);
        for f in &set.f_mats {
            for (i, &kappa) in nominal.survival.iter().enumerate() {
                let sampled = f[(i + 1, i)];
                assert!(sampled >= kappa - 0.4 - 1e-12 && sampled <= kappa + 0.4 + 1e-12);
            }
        }
        // kappa_4 = 0.09 with a +-0.4 band must leave (0,1) for some draws
        // (and kappa_1 = 0.97 can exceed one).
        assert!(!warnings.is_empty());
        assert!(warnings.iter().any(|w| w.class == 3));
        for w in &warnings {
            assert!(w.value <= 0.0 || w.value >= 1.0);
        }
        // All sampled models stay unstable.
        for f in &set.f_mats {
            assert!(matrix::spectral_radius(f).unwrap() > 1.0);
        }
    }

    #[test]
    fn zero_width_spec_copies_nominal() {
        let nominal = benchmark_nominal();
        let spec = UncertaintySpec::uniform(4, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (set, warnings) = sample_scenarios(
            &nominal,
            &spec,
            3,
            Mat::identity(5, 5),
            Vector::zeros(5),
            &mut rng,
        )
        .unwrap();
        assert!(warnings.is_empty());
        let f0 = leslie_matrix(&nominal);
        assert!(set.f_mats.iter().all(|f| f == &f0));
    }
}
