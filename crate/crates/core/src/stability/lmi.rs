//! Lyapunov LMI certificates and the (C2) barrier solver.
//!
//! A gain `K` is certified stable when matrices `(P, C, D)` with `D = KC`
//! satisfy
//!
//! ```text
//! [ P            FC + GD      ]
//! [ (FC + GD)^T  C + C^T - P  ]  >=  xi * I
//! ```
//!
//! The (C2) subproblem fits the closest representable pair to a given `K`
//! by minimizing `|KC - D|_F^2` over that spectrahedron. It is solved with
//! a log-det barrier driven along a geometric schedule, after a feasibility
//! phase that shifts the block until it is strictly positive. The scale
//! invariance of the LMI is removed by pinning `trace(P) = n`, which keeps
//! certificates at unit scale and the fitted residual meaningful.
//!
//! When `K` is already stabilizing (single-scenario case), the certificate
//! is constructed directly from the Stein equation
//! `F_K Y F_K^T - Y = -I` with `P = C = Y`, `D = K Y`, giving a zero
//! residual without entering the barrier at all.

use nalgebra::linalg::{Cholesky, SymmetricEigen};

use super::StabilityError;
use crate::matrix::{self, Mat, Vector};

/// Default strictness shift of the certified LMI.
pub const DEFAULT_XI: f64 = 1e-5;
/// Residual threshold separating "representable" from "not representable"
/// in [`lyapunov_lmi_check`]; certificates are trace-normalized so the
/// residual is scale-meaningful.
pub const FEASIBLE_RESIDUAL_TOL: f64 = 1e-4;

/// Lyapunov LMI certificate for a constant gain.
#[derive(Debug, Clone)]
pub struct LmiCertificate {
    pub p: Mat,
    pub c: Mat,
    pub d: Mat,
    pub xi: f64,
}

impl LmiCertificate {
    /// The certified block with the strictness shift subtracted; the
    /// certificate is valid iff this is positive semidefinite.
    pub fn shifted_block(&self, f: &Mat, g: &Mat) -> Mat {
        assemble_block(&self.p, &self.c, &self.d, f, g, self.xi)
    }

    /// Recovers `K = D C^{-1}` when `C` is invertible.
    pub fn gain(&self) -> Result<Mat, StabilityError> {
        let kt = matrix::solve_linear(&self.c.transpose(), &self.d.transpose())?;
        Ok(kt.transpose())
    }
}

/// Verdict of the LMI feasibility search for a fixed gain.
#[derive(Debug, Clone)]
pub enum LmiOutcome {
    Feasible(LmiCertificate),
    Infeasible { residual: f64 },
}

/// Barrier-Newton settings for the (C2) solve.
#[derive(Debug, Clone)]
pub struct BarrierConfig {
    pub mu_init: f64,
    pub mu_factor: f64,
    pub mu_min: f64,
    pub max_newton_per_stage: usize,
    pub newton_tol: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            mu_init: 1.0,
            mu_factor: 0.2,
            mu_min: 1e-8,
            max_newton_per_stage: 60,
            newton_tol: 1e-11,
        }
    }
}

/// Result of a (C2) solve.
#[derive(Debug, Clone)]
pub struct C2Solution {
    pub p: Mat,
    pub c: Mat,
    pub d: Mat,
    /// `|KC - D|_F` at the returned point.
    pub residual: f64,
}

pub(crate) fn assemble_block(p: &Mat, c: &Mat, d: &Mat, f: &Mat, g: &Mat, xi: f64) -> Mat {
    let n = p.nrows();
    let off = f * c + g * d;
    let mut m = Mat::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(p);
    m.view_mut((0, n), (n, n)).copy_from(&off);
    m.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    m.view_mut((n, n), (n, n)).copy_from(&(c + c.transpose() - p));
    for i in 0..2 * n {
        m[(i, i)] -= xi;
    }
    m
}

/// Packing of the symmetric `P`, full `C`, and full `D` into one parameter
/// vector, plus the affine sensitivities of the LMI block.
struct CertLayout {
    n: usize,
    m: usize,
}

impl CertLayout {
    fn n_p(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn n_vars(&self) -> usize {
        self.n_p() + self.n * self.n + self.m * self.n
    }

    fn pack(&self, p: &Mat, c: &Mat, d: &Mat) -> Vector {
        let mut theta = Vector::zeros(self.n_vars());
        let mut idx = 0;
        for j in 0..self.n {
            for i in 0..=j {
                theta[idx] = p[(i, j)];
                idx += 1;
            }
        }
        for j in 0..self.n {
            for i in 0..self.n {
                theta[idx] = c[(i, j)];
                idx += 1;
            }
        }
        for j in 0..self.n {
            for i in 0..self.m {
                theta[idx] = d[(i, j)];
                idx += 1;
            }
        }
        theta
    }

    fn unpack(&self, theta: &Vector) -> (Mat, Mat, Mat) {
        let mut p = Mat::zeros(self.n, self.n);
        let mut idx = 0;
        for j in 0..self.n {
            for i in 0..=j {
                p[(i, j)] = theta[idx];
                p[(j, i)] = theta[idx];
                idx += 1;
            }
        }
        let mut c = Mat::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in 0..self.n {
                c[(i, j)] = theta[idx];
                idx += 1;
            }
        }
        let mut d = Mat::zeros(self.m, self.n);
        for j in 0..self.n {
            for i in 0..self.m {
                d[(i, j)] = theta[idx];
                idx += 1;
            }
        }
        (p, c, d)
    }

    /// Directional derivatives of the scale-floor block `P - I`.
    fn floor_sensitivities(&self) -> Vec<Mat> {
        let n = self.n;
        let mut out = Vec::with_capacity(self.n_vars());
        for j in 0..n {
            for i in 0..=j {
                let mut dp = Mat::zeros(n, n);
                dp[(i, j)] += 1.0;
                dp[(j, i)] = dp[(i, j)];
                out.push(dp);
            }
        }
        for _ in self.n_p()..self.n_vars() {
            out.push(Mat::zeros(n, n));
        }
        out
    }

    /// Directional derivatives of the LMI block for one scenario matrix.
    fn block_sensitivities(&self, f: &Mat, g: &Mat) -> Vec<Mat> {
        let n = self.n;
        let two_n = 2 * n;
        let mut out = Vec::with_capacity(self.n_vars());
        for j in 0..n {
            for i in 0..=j {
                let mut dm = Mat::zeros(two_n, two_n);
                dm[(i, j)] += 1.0;
                dm[(j, i)] = dm[(i, j)];
                dm[(n + i, n + j)] -= 1.0;
                dm[(n + j, n + i)] = dm[(n + i, n + j)];
                out.push(dm);
            }
        }
        for b in 0..n {
            for a in 0..n {
                // dC = e_ab: top-right column b picks up column a of F,
                // bottom-right gains e_ab + e_ba.
                let mut dm = Mat::zeros(two_n, two_n);
                for r in 0..n {
                    dm[(r, n + b)] += f[(r, a)];
                    dm[(n + b, r)] += f[(r, a)];
                }
                dm[(n + a, n + b)] += 1.0;
                dm[(n + b, n + a)] += 1.0;
                out.push(dm);
            }
        }
        for d_col in 0..n {
            for d_row in 0..self.m {
                let mut dm = Mat::zeros(two_n, two_n);
                for r in 0..n {
                    dm[(r, n + d_col)] += g[(r, d_row)];
                    dm[(n + d_col, r)] += g[(r, d_row)];
                }
                out.push(dm);
            }
        }
        out
    }

    /// Sensitivities of the fitted residual `KC - D` per variable.
    fn penalty_sensitivities(&self, k: &Mat) -> Vec<Mat> {
        let (n, m) = (self.n, self.m);
        let mut out = Vec::with_capacity(self.n_vars());
        for _ in 0..self.n_p() {
            out.push(Mat::zeros(m, n));
        }
        for b in 0..n {
            for a in 0..n {
                let mut r = Mat::zeros(m, n);
                for row in 0..m {
                    r[(row, b)] = k[(row, a)];
                }
                out.push(r);
            }
        }
        for d_col in 0..n {
            for d_row in 0..m {
                let mut r = Mat::zeros(m, n);
                r[(d_row, d_col)] = -1.0;
                out.push(r);
            }
        }
        out
    }
}

fn min_eigenvalue(m: &Mat) -> Result<f64, StabilityError> {
    let eig = SymmetricEigen::try_new(matrix::sym_part(m), f64::EPSILON, 20_000)
        .ok_or_else(|| StabilityError::NumericalFailure("symmetric eigen stalled".into()))?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Direct Stein-equation certificate for a stabilizing gain: solve
/// `F_K Y F_K^T - Y = -I` and use `P = C = Y`, `D = K Y`, scaled up until
/// `min_eig(Y) >= 1` and the shifted LMI clears zero. Returns `None` when
/// `K` is not certifiable this way (including every unstable `K`).
fn stein_certificate(k: &Mat, f: &Mat, g: &Mat, xi: f64) -> Option<(Mat, Mat, Mat)> {
    let n = f.nrows();
    let fk = super::closed_loop(f, g, k);
    let stein = Mat::identity(n * n, n * n) - matrix::kron(&fk, &fk);
    let rhs = matrix::vec_col(&Mat::identity(n, n));
    let y_vec = matrix::solve_vec(&stein, &rhs).ok()?;
    let mut y = Mat::from_column_slice(n, n, y_vec.as_slice());
    y = matrix::sym_part(&y);
    let y_min = min_eigenvalue(&y).ok()?;
    if !(y_min.is_finite() && y_min > 0.0) {
        return None;
    }
    let lmi_margin = min_eigenvalue(&assemble_block(&y, &y, &(k * &y), f, g, 0.0)).ok()?;
    if lmi_margin <= 0.0 {
        return None;
    }
    let scale = (1.0 / y_min).max(2.0 * xi / lmi_margin).max(1.0);
    y *= scale;
    let d = k * &y;
    let block = assemble_block(&y, &y, &d, f, g, xi);
    if min_eigenvalue(&block).ok()? >= -1e-12 {
        Some((y.clone(), y, d))
    } else {
        None
    }
}

struct BarrierEngine<'a> {
    layout: CertLayout,
    f_mats: &'a [Mat],
    g: &'a Mat,
    xi: f64,
    /// Per-scenario LMI block sensitivities.
    dms: Vec<Vec<Mat>>,
    /// Sensitivities of the scale-floor block `P - I`. The floor removes
    /// the scale invariance of the LMI, keeping certificates at unit size
    /// so fitted residuals are comparable across gains.
    floor_dms: Vec<Mat>,
}

struct Factors {
    scenario: Vec<Cholesky<f64, nalgebra::Dyn>>,
    floor: Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> BarrierEngine<'a> {
    fn new(f_mats: &'a [Mat], g: &'a Mat, xi: f64) -> Self {
        let layout = CertLayout {
            n: g.nrows(),
            m: g.ncols(),
        };
        let dms = f_mats
            .iter()
            .map(|f| layout.block_sensitivities(f, g))
            .collect();
        let floor_dms = layout.floor_sensitivities();
        Self {
            layout,
            f_mats,
            g,
            xi,
            dms,
            floor_dms,
        }
    }

    fn blocks(&self, theta: &Vector, slack: Option<f64>) -> (Vec<Mat>, Mat) {
        let (p, c, d) = self.layout.unpack(theta);
        let scenario = self
            .f_mats
            .iter()
            .map(|f| {
                let mut m = assemble_block(&p, &c, &d, f, self.g, self.xi);
                if let Some(s) = slack {
                    for i in 0..m.nrows() {
                        m[(i, i)] += s;
                    }
                }
                m
            })
            .collect();
        // The slack never applies to the floor: the start point is chosen
        // strictly inside it and the line search keeps it there.
        let floor = &p - Mat::identity(self.layout.n, self.layout.n);
        (scenario, floor)
    }

    /// Cholesky factors of every barrier block, or `None` if any fails.
    fn factorize(&self, theta: &Vector, slack: Option<f64>) -> Option<Factors> {
        let (scenario, floor) = self.blocks(theta, slack);
        let scenario = scenario
            .into_iter()
            .map(Cholesky::new)
            .collect::<Option<Vec<_>>>()?;
        let floor = Cholesky::new(floor)?;
        Some(Factors { scenario, floor })
    }

    fn log_det(ch: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
        2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Barrier value: mean over scenario blocks plus the floor block.
    fn barrier_value(factors: &Factors) -> f64 {
        let n_sc = factors.scenario.len() as f64;
        let mean: f64 = factors.scenario.iter().map(Self::log_det).sum::<f64>() / n_sc;
        -(mean + Self::log_det(&factors.floor))
    }

    /// Barrier gradient and Hessian in packed coordinates, extended by the
    /// slack variable when present.
    fn barrier_derivatives(&self, factors: &Factors, with_slack: bool) -> (Vector, Mat) {
        let nv = self.layout.n_vars() + usize::from(with_slack);
        let mut grad = Vector::zeros(nv);
        let mut hess = Mat::zeros(nv, nv);
        let n_sc = self.f_mats.len() as f64;
        let two_n = 2 * self.layout.n;
        let identity = Mat::identity(two_n, two_n);

        for (s, ch) in factors.scenario.iter().enumerate() {
            let inv = ch.inverse();
            // W_i = M^{-1} dM_i M^{-1}; tr(M^{-1} dM_i) and <W_i, dM_j>
            // supply the gradient and Hessian contributions.
            let mut ws: Vec<Mat> = Vec::with_capacity(nv);
            for i in 0..nv {
                let dm = if i < self.layout.n_vars() {
                    &self.dms[s][i]
                } else {
                    &identity
                };
                let u = &inv * dm;
                grad[i] -= u.trace() / n_sc;
                ws.push(&u * &inv);
            }
            for i in 0..nv {
                for j in i..nv {
                    let dm_j = if j < self.layout.n_vars() {
                        &self.dms[s][j]
                    } else {
                        &identity
                    };
                    let v = ws[i].dot(dm_j) / n_sc;
                    hess[(i, j)] += v;
                    if i != j {
                        hess[(j, i)] += v;
                    }
                }
            }
        }

        // Floor block: only the P variables move it.
        let n_p = self.layout.n_p();
        let floor_inv = factors.floor.inverse();
        let mut ws: Vec<Mat> = Vec::with_capacity(n_p);
        for i in 0..n_p {
            let u = &floor_inv * &self.floor_dms[i];
            grad[i] -= u.trace();
            ws.push(&u * &floor_inv);
        }
        for i in 0..n_p {
            for j in i..n_p {
                let v = ws[i].dot(&self.floor_dms[j]);
                hess[(i, j)] += v;
                if i != j {
                    hess[(j, i)] += v;
                }
            }
        }
        (grad, hess)
    }

    /// One damped-Newton stage at fixed barrier weight. `objective` returns
    /// (value, gradient, Hessian) of the smooth part.
    fn newton_stage<F>(
        &self,
        theta: &mut Vector,
        slack: Option<&mut f64>,
        mu: f64,
        cfg: &BarrierConfig,
        objective: F,
        stop_on_negative_slack: bool,
    ) -> Result<(), StabilityError>
    where
        F: Fn(&Vector, Option<f64>) -> (f64, Vector, Mat),
    {
        let nv = self.layout.n_vars() + usize::from(slack.is_some());
        let mut slack = slack;

        for _ in 0..cfg.max_newton_per_stage {
            let slack_val = slack.as_deref().copied();
            let factors = self
                .factorize(theta, slack_val)
                .ok_or_else(|| StabilityError::NumericalFailure("barrier iterate left the cone".into()))?;
            let (f_val, f_grad, f_hess) = objective(theta, slack_val);
            let (b_grad, b_hess) = self.barrier_derivatives(&factors, slack.is_some());
            let merit0 = f_val + mu * Self::barrier_value(&factors);
            let grad = &f_grad + &b_grad * mu;
            let hess = &f_hess + &b_hess * mu;

            let hess_scale = hess.amax().max(1.0);
            let mut damping = 0.0;
            let delta = loop {
                let mut sys = hess.clone();
                for i in 0..nv {
                    sys[(i, i)] += damping;
                }
                match matrix::solve_vec(&sys, &(-&grad)) {
                    Ok(sol) => break sol,
                    Err(_) if damping < 1e-2 * hess_scale => {
                        damping = if damping == 0.0 {
                            1e-14 * hess_scale
                        } else {
                            damping * 100.0
                        };
                    }
                    Err(e) => return Err(StabilityError::Matrix(e)),
                }
            };
            let decrement = -grad.dot(&delta);
            if decrement.abs() <= cfg.newton_tol * (1.0 + merit0.abs()) {
                break;
            }

            // Backtrack: stay inside the cone and decrease the merit.
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut theta_try = theta.clone();
                for i in 0..self.layout.n_vars() {
                    theta_try[i] += alpha * delta[i];
                }
                let slack_try = slack_val.map(|s| s + alpha * delta[nv - 1]);
                if let Some(factors_try) = self.factorize(&theta_try, slack_try) {
                    let (f_try, _, _) = objective(&theta_try, slack_try);
                    let merit_try = f_try + mu * Self::barrier_value(&factors_try);
                    if merit_try <= merit0 - 1e-4 * alpha * decrement.max(0.0) {
                        *theta = theta_try;
                        if let Some(s) = slack.as_deref_mut() {
                            *s = slack_try.unwrap();
                        }
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            if stop_on_negative_slack {
                if let Some(s) = slack.as_deref() {
                    if *s < 0.0 {
                        return Ok(());
                    }
                }
            }
        }
        Ok(())
    }

    /// Feasibility phase: minimize the diagonal slack on the scenario
    /// blocks until they are strictly positive without it.
    fn phase_one(&self, theta: &mut Vector, cfg: &BarrierConfig) -> Result<(), StabilityError> {
        let worst = self
            .blocks(theta, None)
            .0
            .iter()
            .map(min_eigenvalue)
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if worst > 0.0 {
            return Ok(());
        }
        let mut slack = -worst + 1.0;
        let nv = self.layout.n_vars() + 1;

        let mut mu = cfg.mu_init.max(1.0);
        while mu >= cfg.mu_min.min(1e-6) {
            self.newton_stage(
                theta,
                Some(&mut slack),
                mu,
                cfg,
                |_, s| {
                    let mut grad = Vector::zeros(nv);
                    grad[nv - 1] = 1.0;
                    (s.unwrap_or(0.0), grad, Mat::zeros(nv, nv))
                },
                true,
            )?;
            if slack < 0.0 {
                return Ok(());
            }
            mu *= cfg.mu_factor;
        }
        Err(StabilityError::BarrierInfeasible { best_slack: slack })
    }

    /// Objective phase: minimize `|KC - D|_F^2` over the certified set.
    fn phase_two(
        &self,
        theta: &mut Vector,
        k: &Mat,
        cfg: &BarrierConfig,
    ) -> Result<(), StabilityError> {
        let nv = self.layout.n_vars();
        let pens = self.layout.penalty_sensitivities(k);
        let mut h_f = Mat::zeros(nv, nv);
        for i in 0..nv {
            for j in i..nv {
                let v = 2.0 * pens[i].dot(&pens[j]);
                h_f[(i, j)] = v;
                h_f[(j, i)] = v;
            }
        }

        let mut mu = cfg.mu_init;
        while mu >= cfg.mu_min {
            self.newton_stage(
                theta,
                None,
                mu,
                cfg,
                |theta, _| {
                    let (_, c, d) = self.layout.unpack(theta);
                    let resid = k * &c - &d;
                    let f_val = resid.norm_squared();
                    let mut grad = Vector::zeros(nv);
                    for i in 0..nv {
                        grad[i] = 2.0 * resid.dot(&pens[i]);
                    }
                    (f_val, grad, h_f.clone())
                },
                false,
            )?;
            mu *= cfg.mu_factor;
        }
        Ok(())
    }
}

/// Solves (C2) for one state matrix: the closest LMI-certifiable pair to
/// the gain `K`.
pub fn c2_solve(
    k: &Mat,
    f: &Mat,
    g: &Mat,
    xi: f64,
    cfg: &BarrierConfig,
) -> Result<C2Solution, StabilityError> {
    c2_solve_multi(k, std::slice::from_ref(f), g, xi, cfg, None)
}

/// Multi-scenario (C2): one `(P, C, D)` must satisfy every scenario's LMI
/// simultaneously. `warm` seeds the barrier with a previously feasible
/// certificate, skipping the feasibility phase when it still applies.
pub fn c2_solve_multi(
    k: &Mat,
    f_mats: &[Mat],
    g: &Mat,
    xi: f64,
    cfg: &BarrierConfig,
    warm: Option<(&Mat, &Mat, &Mat)>,
) -> Result<C2Solution, StabilityError> {
    let n = g.nrows();
    let m = g.ncols();
    if k.nrows() != m || k.ncols() != n {
        return Err(StabilityError::Dimension(format!(
            "gain is {}x{}, expected {m}x{n}",
            k.nrows(),
            k.ncols()
        )));
    }

    // Duplicate scenarios add nothing to the constraint set; dropping them
    // keeps "N identical scenarios" bit-identical to the single-scenario
    // path.
    let deduped: Vec<Mat>;
    let f_mats = if f_mats.len() > 1 && f_mats.iter().all(|f| f == &f_mats[0]) {
        deduped = vec![f_mats[0].clone()];
        &deduped[..]
    } else {
        f_mats
    };

    // A stabilizing gain admits an exact certificate; build it directly.
    if f_mats.len() == 1 {
        if let Some((p, c, d)) = stein_certificate(k, &f_mats[0], g, xi) {
            let residual = (k * &c - &d).norm();
            return Ok(C2Solution { p, c, d, residual });
        }
    }

    let engine = BarrierEngine::new(f_mats, g, xi);
    // Start strictly inside the scale floor P > I.
    let mut theta = engine.layout.pack(
        &(Mat::identity(n, n) * 2.0),
        &Mat::identity(n, n),
        &Mat::zeros(m, n),
    );
    let mut warm_used = false;
    if let Some((p, c, d)) = warm {
        let candidate = engine.layout.pack(p, c, d);
        if engine.factorize(&candidate, None).is_some() {
            theta = candidate;
            warm_used = true;
        }
    }
    if !warm_used {
        engine.phase_one(&mut theta, cfg)?;
    }
    engine.phase_two(&mut theta, k, cfg)?;

    let (p, c, d) = engine.layout.unpack(&theta);
    let residual = (k * &c - &d).norm();
    Ok(C2Solution { p, c, d, residual })
}

/// Searches for a Lyapunov LMI certificate of the fixed gain `K` via the
/// (C2) solve; the verdict is driven by the fitted residual and agrees with
/// `rho(F + GK) < 1` away from the stability boundary.
pub fn lyapunov_lmi_check(f: &Mat, g: &Mat, k: &Mat) -> Result<LmiOutcome, StabilityError> {
    lyapunov_lmi_check_with(f, g, k, DEFAULT_XI, &BarrierConfig::default())
}

/// [`lyapunov_lmi_check`] with explicit shift and barrier settings.
pub fn lyapunov_lmi_check_with(
    f: &Mat,
    g: &Mat,
    k: &Mat,
    xi: f64,
    cfg: &BarrierConfig,
) -> Result<LmiOutcome, StabilityError> {
    let sol = c2_solve_multi(k, std::slice::from_ref(f), g, xi, cfg, None)?;
    let tol = FEASIBLE_RESIDUAL_TOL * (1.0 + k.norm());
    if sol.residual <= tol {
        Ok(LmiOutcome::Feasible(LmiCertificate {
            p: sol.p,
            c: sol.c,
            d: sol.d,
            xi,
        }))
    } else {
        Ok(LmiOutcome::Infeasible {
            residual: sol.residual,
        })
    }
}
