//! The deterministic finite-horizon LQR problem and its four equivalent
//! solution routes:
//!
//! * [`solve_p1`]: eliminate the dynamics and minimize the dense quadratic
//!   `u^T B u + 2 a^T u` over the stacked input vector.
//! * [`solve_p2`]: solve the KKT system of the equality-constrained program
//!   in the stacked `(x, u, lambda)` variables.
//! * [`dre_sweep`]: backward difference Riccati recursion with time-varying
//!   gains (P3).
//! * [`solve_p4`]: Pontryagin conditions resolved by the costate sweep.

use thiserror::Error;

use crate::matrix::{self, Mat, MatrixError, Vector};

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("state weight Q must be positive semidefinite (witness {0:.3e})")]
    StateWeightNotPsd(f64),
    #[error("terminal weight S must be positive semidefinite (witness {0:.3e})")]
    TerminalWeightNotPsd(f64),
    #[error("input weight R must be positive definite (witness {0:.3e})")]
    InputWeightNotPd(f64),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Linear time-invariant plant `x_{t+1} = F x_t + G u_t`, `x_0 = x̄`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub f: Mat,
    pub g: Mat,
    pub x0: Vector,
}

impl LtiSystem {
    pub fn new(f: Mat, g: Mat, x0: Vector) -> Result<Self, LqrError> {
        if f.nrows() != f.ncols() {
            return Err(LqrError::Dimension(format!(
                "state matrix must be square, got {}x{}",
                f.nrows(),
                f.ncols()
            )));
        }
        if g.nrows() != f.nrows() {
            return Err(LqrError::Dimension(format!(
                "input matrix has {} rows, expected {}",
                g.nrows(),
                f.nrows()
            )));
        }
        if x0.len() != f.nrows() {
            return Err(LqrError::Dimension(format!(
                "initial state has length {}, expected {}",
                x0.len(),
                f.nrows()
            )));
        }
        matrix::ensure_finite(&f)?;
        matrix::ensure_finite(&g)?;
        matrix::ensure_finite_vec(&x0)?;
        Ok(Self { f, g, x0 })
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.g.ncols()
    }
}

/// Quadratic cost `x_T^T S x_T + sum_t (x_t^T Q x_t + u_t^T R u_t)` over a
/// fixed horizon.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub q: Mat,
    pub r: Mat,
    pub s: Mat,
    pub horizon: usize,
}

impl CostSpec {
    /// Validates symmetry, `Q, S ⪰ 0` and `R ≻ 0` (strictness enforced with
    /// a small positive shift relative to `|R|`).
    pub fn new(q: Mat, r: Mat, s: Mat, horizon: usize) -> Result<Self, LqrError> {
        if horizon == 0 {
            return Err(LqrError::EmptyHorizon);
        }
        let q_check = matrix::is_psd(&q, 0.0)?;
        if !q_check.psd {
            return Err(LqrError::StateWeightNotPsd(q_check.min_eigenvalue));
        }
        let s_check = matrix::is_psd(&s, 0.0)?;
        if !s_check.psd {
            return Err(LqrError::TerminalWeightNotPsd(s_check.min_eigenvalue));
        }
        let r_shift = 1e-10 * r.norm().max(1.0);
        let r_check = matrix::is_psd(&r, r_shift)?;
        if !r_check.psd {
            return Err(LqrError::InputWeightNotPd(r_check.min_eigenvalue));
        }
        Ok(Self { q, r, s, horizon })
    }

    fn check_dims(&self, system: &LtiSystem) -> Result<(), LqrError> {
        let (n, m) = (system.state_dim(), system.input_dim());
        if self.q.nrows() != n || self.s.nrows() != n || self.r.nrows() != m {
            return Err(LqrError::Dimension(format!(
                "cost weights sized (Q {}x{}, R {}x{}, S {}x{}) do not match plant (n={n}, m={m})",
                self.q.nrows(),
                self.q.ncols(),
                self.r.nrows(),
                self.r.ncols(),
                self.s.nrows(),
                self.s.ncols()
            )));
        }
        Ok(())
    }
}

/// Open-loop input sequence `u_0 .. u_{T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    inputs: Vec<Vector>,
}

impl InputSequence {
    pub fn new(inputs: Vec<Vector>) -> Self {
        Self { inputs }
    }

    pub fn zeros(input_dim: usize, horizon: usize) -> Self {
        Self {
            inputs: vec![Vector::zeros(input_dim); horizon],
        }
    }

    /// Splits one stacked meta-vector into per-step inputs.
    pub fn from_stacked(stacked: &Vector, input_dim: usize) -> Result<Self, LqrError> {
        if input_dim == 0 || stacked.len() % input_dim != 0 {
            return Err(LqrError::Dimension(format!(
                "stacked input of length {} is not a multiple of m={input_dim}",
                stacked.len()
            )));
        }
        let horizon = stacked.len() / input_dim;
        let inputs = (0..horizon)
            .map(|t| stacked.rows(t * input_dim, input_dim).into_owned())
            .collect();
        Ok(Self { inputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn get(&self, t: usize) -> &Vector {
        &self.inputs[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vector> {
        self.inputs.iter()
    }

    /// Column meta-vector `[u_0; u_1; ...; u_{T-1}]`.
    pub fn stacked(&self) -> Vector {
        let m = self.inputs.first().map_or(0, Vector::len);
        let mut out = Vector::zeros(m * self.inputs.len());
        for (t, u) in self.inputs.iter().enumerate() {
            out.rows_mut(t * m, m).copy_from(u);
        }
        out
    }
}

/// Riccati value matrices `M_0 .. M_T` and the gains `K_0 .. K_{T-1}` of
/// the backward sweep.
#[derive(Debug, Clone)]
pub struct FeedbackSequence {
    pub gains: Vec<Mat>,
    pub values: Vec<Mat>,
}

/// Costate sequence `lambda_0 .. lambda_T` from the Pontryagin conditions.
#[derive(Debug, Clone)]
pub struct AdjointSequence {
    pub costates: Vec<Vector>,
}

/// Joint solution of the P2 KKT system.
#[derive(Debug, Clone)]
pub struct P2Solution {
    pub inputs: InputSequence,
    pub states: Vec<Vector>,
    pub multipliers: Vec<Vector>,
}

/// Matrices of the stacked equality-constrained form (P2).
#[derive(Debug, Clone)]
pub struct P2Blocks {
    pub a1: Mat,
    pub a2: Mat,
    pub b: Vector,
    pub q_bar: Mat,
    pub r_bar: Mat,
}

/// A simulated trajectory with its realized inputs and cost.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub inputs: InputSequence,
    pub cost: f64,
}

/// Control policy accepted by [`rollout`].
pub enum Policy<'a> {
    /// Fixed open-loop inputs.
    Inputs(&'a InputSequence),
    /// Constant state feedback `u_t = K x_t`.
    Constant(&'a Mat),
    /// Time-varying gains `u_t = K_t x_t`.
    Gains(&'a [Mat]),
}

fn powers(f: &Mat, up_to: usize) -> Vec<Mat> {
    let n = f.nrows();
    let mut out = Vec::with_capacity(up_to + 1);
    out.push(Mat::identity(n, n));
    for t in 1..=up_to {
        let next = &out[t - 1] * f;
        out.push(next);
    }
    out
}

/// Builds the dense quadratic form of (P1): `min_u u^T B u + 2 a^T u`.
///
/// Blocks are indexed `i, j = 1..T`; the terminal weight contributes
/// `G^T (F^{T-i})^T S F^{T-j} G`, the input weight sits on the diagonal, and
/// the running state weight sums `G^T (F^{t-i})^T Q F^{t-j} G` over
/// `t = max(i,j) .. T-1` (empty once `max(i,j) = T`).
pub fn build_p1(system: &LtiSystem, cost: &CostSpec) -> Result<(Mat, Vector), LqrError> {
    cost.check_dims(system)?;
    let (n, m, horizon) = (system.state_dim(), system.input_dim(), cost.horizon);
    let fp = powers(&system.f, horizon);

    // reach[k] = F^k G, the influence of an input k+1 steps in the past.
    let reach: Vec<Mat> = (0..horizon).map(|k| &fp[k] * &system.g).collect();
    let q_reach: Vec<Mat> = reach.iter().map(|p| &cost.q * p).collect();
    let s_reach: Vec<Mat> = reach.iter().map(|p| &cost.s * p).collect();
    // state[t] = F^t x̄, the free response.
    let free: Vec<Vector> = (0..=horizon).map(|t| &fp[t] * &system.x0).collect();

    let mut b = Mat::zeros(m * horizon, m * horizon);
    let mut a = Vector::zeros(m * horizon);
    for i in 1..=horizon {
        for j in 1..=horizon {
            let mut block = reach[horizon - i].transpose() * &s_reach[horizon - j];
            if i == j {
                block += &cost.r;
            }
            for t in i.max(j)..horizon {
                block += reach[t - i].transpose() * &q_reach[t - j];
            }
            b.view_mut(((i - 1) * m, (j - 1) * m), (m, m)).copy_from(&block);
        }
        let mut ai = reach[horizon - i].transpose() * &cost.s * &free[horizon];
        for t in i..horizon {
            ai += reach[t - i].transpose() * &cost.q * &free[t];
        }
        a.rows_mut((i - 1) * m, m).copy_from(&ai);
    }
    let _ = n;
    Ok((matrix::sym_part(&b), a))
}

/// Solves (P1): `u = -B^{-1} a`.
pub fn solve_p1(system: &LtiSystem, cost: &CostSpec) -> Result<InputSequence, LqrError> {
    let (b, a) = build_p1(system, cost)?;
    let u = matrix::solve_vec(&b, &(-a))?;
    InputSequence::from_stacked(&u, system.input_dim())
}

/// Builds the stacked matrices of (P2): `A_1 x + A_2 u = b` with weights
/// `Q̄ = diag(I_T ⊗ Q, S)` and `R̄ = I_T ⊗ R`.
pub fn build_p2(system: &LtiSystem, cost: &CostSpec) -> Result<P2Blocks, LqrError> {
    cost.check_dims(system)?;
    let (n, m, horizon) = (system.state_dim(), system.input_dim(), cost.horizon);
    let nx = n * (horizon + 1);
    let nu = m * horizon;

    let mut a1 = Mat::identity(nx, nx);
    let mut a2 = Mat::zeros(nx, nu);
    for t in 0..horizon {
        a1.view_mut(((t + 1) * n, t * n), (n, n)).copy_from(&(-&system.f));
        a2.view_mut(((t + 1) * n, t * m), (n, m)).copy_from(&(-&system.g));
    }
    let mut b = Vector::zeros(nx);
    b.rows_mut(0, n).copy_from(&system.x0);

    let mut q_bar = Mat::zeros(nx, nx);
    for t in 0..horizon {
        q_bar.view_mut((t * n, t * n), (n, n)).copy_from(&cost.q);
    }
    q_bar
        .view_mut((horizon * n, horizon * n), (n, n))
        .copy_from(&cost.s);
    let r_bar = matrix::kron(&Mat::identity(horizon, horizon), &cost.r);

    Ok(P2Blocks { a1, a2, b, q_bar, r_bar })
}

/// Solves the (P2) KKT system
///
/// ```text
/// 2 Q̄ x + A_1^T λ = 0,   2 R̄ u + A_2^T λ = 0,   A_1 x + A_2 u = b
/// ```
///
/// as one block-tridiagonal banded system over the time stages, which keeps
/// the solve O(T) instead of inverting the stacked matrices densely.
pub fn solve_p2(system: &LtiSystem, cost: &CostSpec) -> Result<P2Solution, LqrError> {
    cost.check_dims(system)?;
    let (n, m, horizon) = (system.state_dim(), system.input_dim(), cost.horizon);
    let f = &system.f;
    let g = &system.g;

    // Stage unknowns: z_0 = [x_0; λ_0], z_t = [u_{t-1}; x_t; λ_t] for t >= 1.
    // Stage equations: z_0 rows are the initial-state constraint and the x_0
    // stationarity; z_t rows are u_{t-1} stationarity, the dynamics
    // constraint at step t, and x_t stationarity.
    let dim0 = 2 * n;
    let dim = m + 2 * n;

    let d0 = {
        let mut d = Mat::zeros(dim0, dim0);
        d.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
        d.view_mut((n, 0), (n, n)).copy_from(&(2.0 * &cost.q));
        d.view_mut((n, n), (n, n)).copy_from(&Mat::identity(n, n));
        d
    };
    let c0 = {
        // Coupling of the x_0 stationarity to λ_1 inside z_1.
        let mut c = Mat::zeros(dim0, dim);
        c.view_mut((n, m + n), (n, n)).copy_from(&(-f.transpose()));
        c
    };

    let mid_d = |weight: &Mat| {
        let mut d = Mat::zeros(dim, dim);
        d.view_mut((0, 0), (m, m)).copy_from(&(2.0 * &cost.r));
        d.view_mut((0, m + n), (m, n)).copy_from(&(-g.transpose()));
        d.view_mut((m, 0), (n, m)).copy_from(&(-g));
        d.view_mut((m, m), (n, n)).copy_from(&Mat::identity(n, n));
        d.view_mut((m + n, m), (n, n)).copy_from(&(2.0 * weight));
        d.view_mut((m + n, m + n), (n, n)).copy_from(&Mat::identity(n, n));
        d
    };
    let mid_c = {
        let mut c = Mat::zeros(dim, dim);
        c.view_mut((m + n, m + n), (n, n)).copy_from(&(-f.transpose()));
        c
    };
    let e_from0 = {
        let mut e = Mat::zeros(dim, dim0);
        e.view_mut((m, 0), (n, n)).copy_from(&(-f));
        e
    };
    let e_mid = {
        let mut e = Mat::zeros(dim, dim);
        e.view_mut((m, m), (n, n)).copy_from(&(-f));
        e
    };

    // Forward block elimination.
    let mut reduced_diag: Vec<Mat> = Vec::with_capacity(horizon + 1);
    let mut rhs: Vec<Vector> = Vec::with_capacity(horizon + 1);
    reduced_diag.push(d0);
    let mut r0 = Vector::zeros(dim0);
    r0.rows_mut(0, n).copy_from(&system.x0);
    rhs.push(r0);

    let singular = |e: MatrixError| match e {
        MatrixError::Singular { pivot, tol } => LqrError::Matrix(MatrixError::Singular { pivot, tol }),
        other => LqrError::Matrix(other),
    };

    let mut couplings: Vec<Mat> = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let e = if t == 1 { &e_from0 } else { &e_mid };
        let c_prev = if t == 1 { &c0 } else { &mid_c };
        let prev = &reduced_diag[t - 1];
        let x = matrix::solve_linear(prev, c_prev).map_err(singular)?;
        let y = matrix::solve_vec(prev, &rhs[t - 1]).map_err(singular)?;
        let d_t = if t == horizon { mid_d(&cost.s) } else { mid_d(&cost.q) };
        reduced_diag.push(&d_t - e * &x);
        rhs.push(-(e * y));
        couplings.push(e.clone() * 0.0); // placeholder, keeps indices aligned
        couplings[t - 1] = Mat::zeros(0, 0);
    }
    drop(couplings);

    // Back substitution.
    let mut stages: Vec<Vector> = vec![Vector::zeros(0); horizon + 1];
    stages[horizon] =
        matrix::solve_vec(&reduced_diag[horizon], &rhs[horizon]).map_err(singular)?;
    for t in (0..horizon).rev() {
        let c = if t == 0 { &c0 } else { &mid_c };
        let adj = &rhs[t] - c * &stages[t + 1];
        stages[t] = matrix::solve_vec(&reduced_diag[t], &adj).map_err(singular)?;
    }

    let mut states = Vec::with_capacity(horizon + 1);
    let mut multipliers = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(stages[0].rows(0, n).into_owned());
    multipliers.push(stages[0].rows(n, n).into_owned());
    for t in 1..=horizon {
        inputs.push(stages[t].rows(0, m).into_owned());
        states.push(stages[t].rows(m, n).into_owned());
        multipliers.push(stages[t].rows(m + n, n).into_owned());
    }

    Ok(P2Solution {
        inputs: InputSequence::new(inputs),
        states,
        multipliers,
    })
}

/// One step of the difference Riccati recursion, returning `(M_t, K_t)` from
/// `M_{t+1}`.
pub fn dre_step(m_next: &Mat, system: &LtiSystem, cost: &CostSpec) -> Result<(Mat, Mat), LqrError> {
    let gm = system.g.transpose() * m_next;
    let inner = &cost.r + &gm * &system.g;
    let gmf = &gm * &system.f;
    let gain = -matrix::solve_linear(&inner, &gmf)?;
    let m = &cost.q + system.f.transpose() * m_next * &system.f + gmf.transpose() * &gain;
    Ok((matrix::sym_part(&m), gain))
}

/// Backward DRE sweep from `M_T = S`; gains satisfy
/// `K_t = -(R + G^T M_{t+1} G)^{-1} G^T M_{t+1} F`.
pub fn dre_sweep(system: &LtiSystem, cost: &CostSpec) -> Result<FeedbackSequence, LqrError> {
    cost.check_dims(system)?;
    let horizon = cost.horizon;
    let mut values = vec![Mat::zeros(0, 0); horizon + 1];
    let mut gains = vec![Mat::zeros(0, 0); horizon];
    values[horizon] = cost.s.clone();
    for t in (0..horizon).rev() {
        let (m, k) = dre_step(&values[t + 1], system, cost)?;
        values[t] = m;
        gains[t] = k;
    }
    Ok(FeedbackSequence { gains, values })
}

/// Solves (P4): computes the Riccati matrices, rolls the closed loop
/// forward, and recovers the costate `λ_t = -2 P_t x_t`.
pub fn solve_p4(
    system: &LtiSystem,
    cost: &CostSpec,
) -> Result<(InputSequence, AdjointSequence), LqrError> {
    let sweep = dre_sweep(system, cost)?;
    let horizon = cost.horizon;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(system.x0.clone());
    for t in 0..horizon {
        let u = &sweep.gains[t] * &states[t];
        let next = &system.f * &states[t] + &system.g * &u;
        inputs.push(u);
        states.push(next);
    }
    let costates = (0..=horizon)
        .map(|t| -2.0 * (&sweep.values[t] * &states[t]))
        .collect();
    Ok((InputSequence::new(inputs), AdjointSequence { costates }))
}

/// Simulates the plant under `policy` and evaluates the cost exactly.
pub fn rollout(system: &LtiSystem, cost: &CostSpec, policy: Policy<'_>) -> Result<Trajectory, LqrError> {
    cost.check_dims(system)?;
    let (n, m, horizon) = (system.state_dim(), system.input_dim(), cost.horizon);
    match &policy {
        Policy::Inputs(seq) => {
            if seq.len() != horizon {
                return Err(LqrError::Dimension(format!(
                    "input sequence has length {}, expected horizon {}",
                    seq.len(),
                    horizon
                )));
            }
            if seq.iter().any(|u| u.len() != m) {
                return Err(LqrError::Dimension("input vector width mismatch".into()));
            }
        }
        Policy::Constant(k) => {
            if k.nrows() != m || k.ncols() != n {
                return Err(LqrError::Dimension(format!(
                    "gain is {}x{}, expected {m}x{n}",
                    k.nrows(),
                    k.ncols()
                )));
            }
        }
        Policy::Gains(ks) => {
            if ks.len() != horizon {
                return Err(LqrError::Dimension(format!(
                    "gain sequence has length {}, expected horizon {}",
                    ks.len(),
                    horizon
                )));
            }
            if ks.iter().any(|k| k.nrows() != m || k.ncols() != n) {
                return Err(LqrError::Dimension("gain shape mismatch".into()));
            }
        }
    }

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut cost_acc = 0.0;
    states.push(system.x0.clone());
    for t in 0..horizon {
        let x = &states[t];
        let u = match &policy {
            Policy::Inputs(seq) => seq.get(t).clone(),
            Policy::Constant(k) => *k * x,
            Policy::Gains(ks) => &ks[t] * x,
        };
        cost_acc += (x.transpose() * &cost.q * x)[(0, 0)] + (u.transpose() * &cost.r * &u)[(0, 0)];
        let next = &system.f * x + &system.g * &u;
        inputs.push(u);
        states.push(next);
    }
    let x_t = &states[horizon];
    cost_acc += (x_t.transpose() * &cost.s * x_t)[(0, 0)];
    Ok(Trajectory {
        states,
        inputs: InputSequence::new(inputs),
        cost: cost_acc,
    })
}

/// The input-independent part of the rolled-out cost,
/// `sum_t x̄^T (F^t)^T Q F^t x̄ + x̄^T (F^T)^T S F^T x̄`.
pub fn free_response_cost(system: &LtiSystem, cost: &CostSpec) -> f64 {
    let fp = powers(&system.f, cost.horizon);
    let mut total = 0.0;
    for (t, p) in fp.iter().enumerate() {
        let x = p * &system.x0;
        let w = if t == cost.horizon { &cost.s } else { &cost.q };
        total += (x.transpose() * w * &x)[(0, 0)];
    }
    total
}

/// Residuals of the five Pontryagin conditions at a candidate solution.
pub fn pontryagin_residual(
    system: &LtiSystem,
    cost: &CostSpec,
    inputs: &InputSequence,
    adjoint: &AdjointSequence,
) -> Result<f64, LqrError> {
    let traj = rollout(system, cost, Policy::Inputs(inputs))?;
    let horizon = cost.horizon;
    let lam = &adjoint.costates;
    let mut worst: f64 = 0.0;
    // Terminal condition λ_T = -2 S x_T.
    worst = worst.max((&lam[horizon] + 2.0 * (&cost.s * &traj.states[horizon])).amax());
    for t in 0..horizon {
        // Costate recursion λ_t = -2 Q x_t + F^T λ_{t+1}.
        let rec = &lam[t] - (system.f.transpose() * &lam[t + 1] - 2.0 * (&cost.q * &traj.states[t]));
        worst = worst.max(rec.amax());
        // Stationarity 2 R u_t - G^T λ_{t+1} = 0.
        let stat = 2.0 * (&cost.r * inputs.get(t)) - system.g.transpose() * &lam[t + 1];
        worst = worst.max(stat.amax());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_system(f: f64, g: f64, x0: f64) -> LtiSystem {
        LtiSystem::new(
            Mat::from_element(1, 1, f),
            Mat::from_element(1, 1, g),
            Vector::from_element(1, x0),
        )
        .unwrap()
    }

    fn scalar_cost(q: f64, r: f64, s: f64, horizon: usize) -> CostSpec {
        CostSpec::new(
            Mat::from_element(1, 1, q),
            Mat::from_element(1, 1, r),
            Mat::from_element(1, 1, s),
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn cost_spec_rejects_bad_weights() {
        let neg = Mat::from_element(1, 1, -1.0);
        let pos = Mat::from_element(1, 1, 1.0);
        assert!(matches!(
            CostSpec::new(neg.clone(), pos.clone(), pos.clone(), 2),
            Err(LqrError::StateWeightNotPsd(_))
        ));
        assert!(matches!(
            CostSpec::new(pos.clone(), Mat::zeros(1, 1), pos.clone(), 2),
            Err(LqrError::InputWeightNotPd(_))
        ));
        assert!(matches!(
            CostSpec::new(pos.clone(), pos.clone(), neg, 2),
            Err(LqrError::TerminalWeightNotPsd(_))
        ));
        assert!(matches!(
            CostSpec::new(pos.clone(), pos.clone(), pos, 0),
            Err(LqrError::EmptyHorizon)
        ));
    }

    #[test]
    fn p1_scalar_t1() {
        // F = G = S = R = x̄ = 1, T = 1: only the S and R terms survive.
        let system = scalar_system(1.0, 1.0, 1.0);
        let cost = scalar_cost(0.3, 1.0, 1.0, 1);
        let (b, a) = build_p1(&system, &cost).unwrap();
        assert_relative_eq!(b[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(a[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn p1_no_input_path() {
        // G = 0 decouples the cost from u: a = 0 and B = I_T ⊗ R.
        let system = scalar_system(0.7, 0.0, 2.0);
        let cost = scalar_cost(1.0, 3.0, 1.0, 4);
        let (b, a) = build_p1(&system, &cost).unwrap();
        assert!(a.amax() <= 1e-14);
        assert!((b - Mat::identity(4, 4) * 3.0).amax() <= 1e-14);
    }

    #[test]
    fn p1_hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let system = random::random_system(&mut rng, 3, 2, 0.9).unwrap();
        let cost = random::random_cost(&mut rng, 3, 2, 4).unwrap();
        let (b, _) = build_p1(&system, &cost).unwrap();
        let dim = 2 * 4;
        let h = 1e-3;
        let cost_at = |u: &Vector| {
            let seq = InputSequence::from_stacked(u, 2).unwrap();
            rollout(&system, &cost, Policy::Inputs(&seq)).unwrap().cost
        };
        let u0 = Vector::from_fn(dim, |i, _| 0.1 * (i as f64) - 0.3);
        // J is exactly quadratic, so central differences recover 2B.
        for i in 0..dim {
            for j in 0..dim {
                let mut upp = u0.clone();
                upp[i] += h;
                upp[j] += h;
                let mut upm = u0.clone();
                upm[i] += h;
                upm[j] -= h;
                let mut ump = u0.clone();
                ump[i] -= h;
                ump[j] += h;
                let mut umm = u0.clone();
                umm[i] -= h;
                umm[j] -= h;
                let fd = (cost_at(&upp) - cost_at(&upm) - cost_at(&ump) + cost_at(&umm)) / (4.0 * h * h);
                assert_relative_eq!(fd, 2.0 * b[(i, j)], epsilon = 1e-5, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn p1_scalar_solution_and_cost() {
        // min (1+u)^2 + u^2 -> u = -1/2, J = 1/2 (with Q = 0).
        let system = scalar_system(1.0, 1.0, 1.0);
        let cost = scalar_cost(0.0, 1.0, 1.0, 1);
        let u = solve_p1(&system, &cost).unwrap();
        assert_relative_eq!(u.get(0)[0], -0.5, epsilon = 1e-12);
        let traj = rollout(&system, &cost, Policy::Inputs(&u)).unwrap();
        assert_relative_eq!(traj.cost, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn p1_zero_initial_state() {
        let system = scalar_system(1.3, 0.7, 0.0);
        let cost = scalar_cost(1.0, 1.0, 1.0, 5);
        let u = solve_p1(&system, &cost).unwrap();
        assert!(u.stacked().amax() <= 1e-14);
    }

    #[test]
    fn p1_beats_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (system, cost) = random::random_instance(&mut rng, 4, 2, 6).unwrap();
            let u = solve_p1(&system, &cost).unwrap();
            let opt = rollout(&system, &cost, Policy::Inputs(&u)).unwrap().cost;
            let zero = rollout(
                &system,
                &cost,
                Policy::Inputs(&InputSequence::zeros(2, 6)),
            )
            .unwrap()
            .cost;
            assert!(opt <= zero + 1e-9 * (1.0 + zero));
        }
    }

    #[test]
    fn p2_blocks_scalar() {
        let system = scalar_system(2.0, 3.0, 1.5);
        let cost = scalar_cost(1.0, 1.0, 1.0, 1);
        let blocks = build_p2(&system, &cost).unwrap();
        assert_eq!(blocks.a1, Mat::from_row_slice(2, 2, &[1.0, 0.0, -2.0, 1.0]));
        assert_eq!(blocks.a2, Mat::from_row_slice(2, 1, &[0.0, -3.0]));
        assert_eq!(blocks.b, Vector::from_vec(vec![1.5, 0.0]));
    }

    #[test]
    fn p2_constraint_reproduces_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (system, cost) = random::random_instance(&mut rng, 3, 2, 5).unwrap();
        let blocks = build_p2(&system, &cost).unwrap();
        // det(A1) = 1: unit lower-triangular.
        assert_relative_eq!(blocks.a1.determinant(), 1.0, epsilon = 1e-9);

        let u = random::random_inputs(&mut rng, 2, 5);
        let traj = rollout(&system, &cost, Policy::Inputs(&u)).unwrap();
        let mut x_stack = Vector::zeros(3 * 6);
        for (t, x) in traj.states.iter().enumerate() {
            x_stack.rows_mut(3 * t, 3).copy_from(x);
        }
        let residual = &blocks.a1 * x_stack + &blocks.a2 * u.stacked() - &blocks.b;
        assert!(residual.amax() <= 1e-12);
    }

    #[test]
    fn p2_kkt_residuals_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (system, cost) = random::random_instance(&mut rng, 3, 2, 6).unwrap();
            let sol = solve_p2(&system, &cost).unwrap();
            let blocks = build_p2(&system, &cost).unwrap();
            let x = {
                let mut s = Vector::zeros(3 * 7);
                for (t, xt) in sol.states.iter().enumerate() {
                    s.rows_mut(3 * t, 3).copy_from(xt);
                }
                s
            };
            let lam = {
                let mut s = Vector::zeros(3 * 7);
                for (t, lt) in sol.multipliers.iter().enumerate() {
                    s.rows_mut(3 * t, 3).copy_from(lt);
                }
                s
            };
            let u = sol.inputs.stacked();
            let scale = 1.0 + x.amax().max(lam.amax()).max(u.amax());
            let r1 = 2.0 * (&blocks.q_bar * &x) + blocks.a1.transpose() * &lam;
            let r2 = 2.0 * (&blocks.r_bar * &u) + blocks.a2.transpose() * &lam;
            let r3 = &blocks.a1 * &x + &blocks.a2 * &u - &blocks.b;
            assert!(r1.amax() <= 1e-10 * scale, "stationarity in x: {}", r1.amax());
            assert!(r2.amax() <= 1e-10 * scale, "stationarity in u: {}", r2.amax());
            assert!(r3.amax() <= 1e-10 * scale, "primal feasibility: {}", r3.amax());
        }
    }

    #[test]
    fn p2_zero_initial_state_gives_zero_solution() {
        let system = LtiSystem::new(
            Mat::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.8]),
            Mat::from_row_slice(2, 1, &[1.0, 0.5]),
            Vector::zeros(2),
        )
        .unwrap();
        let cost = CostSpec::new(Mat::identity(2, 2), Mat::identity(1, 1), Mat::identity(2, 2), 4).unwrap();
        let sol = solve_p2(&system, &cost).unwrap();
        assert!(sol.inputs.stacked().amax() <= 1e-13);
        assert!(sol.states.iter().all(|x| x.amax() <= 1e-13));
        assert!(sol.multipliers.iter().all(|l| l.amax() <= 1e-13));
    }

    #[test]
    fn p2_matches_p1_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let (system, cost) = random::random_instance_sized(&mut rng, 5, 5, 10).unwrap();
            let u1 = solve_p1(&system, &cost).unwrap().stacked();
            let u2 = solve_p2(&system, &cost).unwrap().inputs.stacked();
            let err = (&u1 - &u2).norm();
            assert!(err <= 1e-8 * (1.0 + u1.norm()), "P1/P2 gap {err:.3e}");
        }
    }

    #[test]
    fn dre_scalar_hand_values() {
        let system = scalar_system(1.0, 1.0, 1.0);
        let cost = scalar_cost(1.0, 1.0, 1.0, 2);
        let sweep = dre_sweep(&system, &cost).unwrap();
        assert_relative_eq!(sweep.values[2][(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(sweep.values[1][(0, 0)], 1.5, epsilon = 1e-14);
        assert_relative_eq!(sweep.values[0][(0, 0)], 1.6, epsilon = 1e-14);
        assert_relative_eq!(sweep.gains[1][(0, 0)], -0.5, epsilon = 1e-14);
        assert_relative_eq!(sweep.gains[0][(0, 0)], -0.6, epsilon = 1e-14);
    }

    #[test]
    fn dre_zero_weights_and_zero_input_matrix() {
        let system = scalar_system(1.2, 1.0, 1.0);
        let cost = scalar_cost(0.0, 1.0, 0.0, 3);
        let sweep = dre_sweep(&system, &cost).unwrap();
        assert!(sweep.values.iter().all(|m| m.amax() == 0.0));
        assert!(sweep.gains.iter().all(|k| k.amax() == 0.0));

        // G = 0: pure Lyapunov recursion, gains vanish.
        let system = scalar_system(0.9, 0.0, 1.0);
        let cost = scalar_cost(1.0, 1.0, 1.0, 3);
        let sweep = dre_sweep(&system, &cost).unwrap();
        assert!(sweep.gains.iter().all(|k| k.amax() == 0.0));
        let m1 = 1.0 + 0.9f64.powi(2) * (1.0 + 0.9f64.powi(2));
        assert_relative_eq!(sweep.values[2][(0, 0)], 1.0 + 0.81, epsilon = 1e-14);
        assert_relative_eq!(sweep.values[1][(0, 0)], m1, epsilon = 1e-14);
        assert_relative_eq!(
            sweep.values[0][(0, 0)],
            1.0 + 0.81 * m1,
            epsilon = 1e-14
        );
    }

    #[test]
    fn dre_values_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (system, cost) = random::random_instance(&mut rng, 4, 2, 8).unwrap();
        let sweep = dre_sweep(&system, &cost).unwrap();
        assert_eq!(sweep.values[8], cost.s);
        for m in &sweep.values {
            assert!(crate::matrix::is_psd(m, 0.0).unwrap().psd);
        }
    }

    #[test]
    fn p4_scalar_values() {
        let system = scalar_system(1.0, 1.0, 1.0);
        let cost = scalar_cost(1.0, 1.0, 1.0, 2);
        let (u, adj) = solve_p4(&system, &cost).unwrap();
        assert_relative_eq!(u.get(0)[0], -0.6, epsilon = 1e-14);
        assert_relative_eq!(adj.costates[0][0], -3.2, epsilon = 1e-14);
    }

    #[test]
    fn p4_zero_state_and_residuals() {
        let system = scalar_system(1.4, 1.0, 0.0);
        let cost = scalar_cost(1.0, 1.0, 1.0, 4);
        let (u, adj) = solve_p4(&system, &cost).unwrap();
        assert!(u.stacked().amax() == 0.0);
        assert!(adj.costates.iter().all(|l| l.amax() == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..20 {
            let (system, cost) = random::random_instance(&mut rng, 4, 3, 7).unwrap();
            let (u, adj) = solve_p4(&system, &cost).unwrap();
            let res = pontryagin_residual(&system, &cost, &u, &adj).unwrap();
            let scale = 1.0 + adj.costates.iter().map(|l| l.amax()).fold(0.0, f64::max);
            assert!(res <= 1e-8 * scale, "pontryagin residual {res:.3e}");
        }
    }

    #[test]
    fn rollout_examples() {
        let system = scalar_system(1.0, 1.0, 1.0);
        let cost = scalar_cost(1.0, 1.0, 1.0, 2);
        let zero = InputSequence::zeros(1, 2);
        let traj = rollout(&system, &cost, Policy::Inputs(&zero)).unwrap();
        assert_relative_eq!(traj.cost, 3.0, epsilon = 1e-14);

        let k0 = Mat::zeros(1, 1);
        let traj_k = rollout(&system, &cost, Policy::Constant(&k0)).unwrap();
        assert_relative_eq!(traj_k.cost, traj.cost, epsilon = 1e-14);
    }

    #[test]
    fn rollout_cost_equals_p1_quadratic_plus_free_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..10 {
            let (system, cost) = random::random_instance(&mut rng, 3, 2, 5).unwrap();
            let (b, a) = build_p1(&system, &cost).unwrap();
            let u = random::random_inputs(&mut rng, 2, 5);
            let us = u.stacked();
            let quad = (us.transpose() * &b * &us)[(0, 0)] + 2.0 * a.dot(&us);
            let direct = rollout(&system, &cost, Policy::Inputs(&u)).unwrap().cost;
            let expected = quad + free_response_cost(&system, &cost);
            assert_relative_eq!(direct, expected, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn four_formulations_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..100 {
            let (system, cost) = random::random_instance_sized(&mut rng, 5, 5, 10).unwrap();
            let u1 = solve_p1(&system, &cost).unwrap().stacked();
            let u2 = solve_p2(&system, &cost).unwrap().inputs.stacked();
            let sweep = dre_sweep(&system, &cost).unwrap();
            let u3 = rollout(&system, &cost, Policy::Gains(&sweep.gains))
                .unwrap()
                .inputs
                .stacked();
            let u4 = solve_p4(&system, &cost).unwrap().0.stacked();
            let scale = 1.0 + u1.norm();
            for (name, other) in [("P2", &u2), ("P3", &u3), ("P4", &u4)] {
                let err = (&u1 - other).norm();
                assert!(err <= 1e-6 * scale, "{name} deviates by {err:.3e}");
            }
        }
    }

    #[test]
    fn optimal_cost_equals_value_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        for _ in 0..25 {
            let (system, cost) = random::random_instance(&mut rng, 4, 2, 8).unwrap();
            let sweep = dre_sweep(&system, &cost).unwrap();
            let j_opt = rollout(&system, &cost, Policy::Gains(&sweep.gains)).unwrap().cost;
            let value = (system.x0.transpose() * &sweep.values[0] * &system.x0)[(0, 0)];
            assert_relative_eq!(j_opt, value, epsilon = 1e-8, max_relative = 1e-8);

            // Any feasible input is lower-bounded by the value function.
            for _ in 0..5 {
                let u = random::random_inputs(&mut rng, 2, 8);
                let j = rollout(&system, &cost, Policy::Inputs(&u)).unwrap().cost;
                assert!(j >= value - 1e-8 * (1.0 + value.abs()));
            }
        }
    }
}
