//! Seeded random problem instances for tests and benchmarks.
//!
//! State matrices are drawn with entries uniform in [-1, 1] and rescaled to
//! a target spectral radius; weights are Gram matrices so they are PSD by
//! construction. All draws are deterministic given the caller's RNG state.

use rand::Rng;

use crate::lqr::{CostSpec, InputSequence, LqrError, LtiSystem};
use crate::matrix::{self, Mat, Vector};

/// Random plant with `spectral_radius(F) = target_rho` and dense `G`.
pub fn random_system<R: Rng>(
    rng: &mut R,
    n: usize,
    m: usize,
    target_rho: f64,
) -> Result<LtiSystem, LqrError> {
    let f = loop {
        let candidate = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let rho = matrix::spectral_radius(&candidate)?;
        if rho > 1e-6 {
            break candidate * (target_rho / rho);
        }
    };
    let g = Mat::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    LtiSystem::new(f, g, x0)
}

/// Random PSD/PD cost weights for an `n`-state, `m`-input plant.
pub fn random_cost<R: Rng>(
    rng: &mut R,
    n: usize,
    m: usize,
    horizon: usize,
) -> Result<CostSpec, LqrError> {
    let gram = |rng: &mut R, d: usize| {
        let a = Mat::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose()
    };
    let q = gram(rng, n);
    let s = gram(rng, n);
    let r = gram(rng, m) + Mat::identity(m, m) * 0.5;
    CostSpec::new(q, r, s, horizon)
}

/// Random system/cost pair with dimensions fixed by the caller and a
/// spectral radius uniform in [0.3, 1.4].
pub fn random_instance<R: Rng>(
    rng: &mut R,
    n: usize,
    m: usize,
    horizon: usize,
) -> Result<(LtiSystem, CostSpec), LqrError> {
    let rho = rng.gen_range(0.3..1.4);
    let system = random_system(rng, n, m, rho)?;
    let cost = random_cost(rng, n, m, horizon)?;
    Ok((system, cost))
}

/// Random instance with dimensions drawn uniformly up to the given caps.
pub fn random_instance_sized<R: Rng>(
    rng: &mut R,
    max_n: usize,
    max_m: usize,
    max_horizon: usize,
) -> Result<(LtiSystem, CostSpec), LqrError> {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=max_m);
    let horizon = rng.gen_range(1..=max_horizon);
    random_instance(rng, n, m, horizon)
}

/// Random open-loop input sequence with entries uniform in [-1, 1].
pub fn random_inputs<R: Rng>(rng: &mut R, m: usize, horizon: usize) -> InputSequence {
    InputSequence::new(
        (0..horizon)
            .map(|_| Vector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
            .collect(),
    )
}

/// Random gain with standard-normal entries scaled by `scale`.
pub fn random_gain<R: Rng>(rng: &mut R, m: usize, n: usize, scale: f64) -> Mat {
    Mat::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
}
