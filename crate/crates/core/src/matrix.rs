//! Dense real matrix primitives shared by every solver in the crate.
//!
//! Everything is a `nalgebra::DMatrix<f64>` in column-major layout, and
//! `vec_col` stacks columns in that same order. Complex arithmetic never
//! crosses a public signature: eigenvalues are reduced to their moduli
//! inside [`spectral_radius`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Relative symmetry tolerance: `|X - X^T|_F <= SYMMETRY_RTOL * |X|_F`.
pub const SYMMETRY_RTOL: f64 = 1e-9;
/// Relative pivot tolerance below which a matrix is declared singular.
pub const SINGULARITY_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains a non-finite entry")]
    NonFinite,
    #[error("matrix is not symmetric: asymmetry {asymmetry:.3e} exceeds {tol:.3e}")]
    NotSymmetric { asymmetry: f64, tol: f64 },
    #[error("matrix is singular to tolerance: pivot {pivot:.3e} < {tol:.3e}")]
    Singular { pivot: f64, tol: f64 },
    #[error("eigenvalue iteration did not converge")]
    EigenNonConvergence,
}

/// Outcome of a (shifted) positive-semidefiniteness test.
#[derive(Debug, Clone, Copy)]
pub struct PsdCheck {
    /// Whether `X - shift*I` is positive semidefinite.
    pub psd: bool,
    /// Smallest eigenvalue of the shifted, symmetrized matrix (the witness).
    pub min_eigenvalue: f64,
}

pub fn ensure_finite(x: &Mat) -> Result<(), MatrixError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MatrixError::NonFinite)
    }
}

pub fn ensure_finite_vec(x: &Vector) -> Result<(), MatrixError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MatrixError::NonFinite)
    }
}

/// Kronecker product `X ⊗ Y`.
pub fn kron(x: &Mat, y: &Mat) -> Mat {
    x.kronecker(y)
}

/// Column-major vectorization: stacks the columns of `x` into one vector.
pub fn vec_col(x: &Mat) -> Vector {
    Vector::from_column_slice(x.as_slice())
}

/// Symmetric part `(X + X^T)/2`.
pub fn sym_part(x: &Mat) -> Mat {
    (x + x.transpose()) * 0.5
}

/// The `d1*d2 x d1*d2` commutation matrix `K` with `K vec(X) = vec(X^T)`
/// for every `d1 x d2` matrix `X`.
pub fn commutation_matrix(d1: usize, d2: usize) -> Mat {
    let size = d1 * d2;
    let mut k = Mat::zeros(size, size);
    for i in 0..d1 {
        for j in 0..d2 {
            // vec(X) places (i,j) at i + j*d1; vec(X^T) places it at j + i*d2.
            k[(j + i * d2, i + j * d1)] = 1.0;
        }
    }
    k
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Eigenvalues come from a real Schur decomposition (Hessenberg reduction
/// followed by shifted QR); a stalled iteration is reported as an error
/// rather than returning a silently wrong value.
pub fn spectral_radius(x: &Mat) -> Result<f64, MatrixError> {
    if x.nrows() != x.ncols() {
        return Err(MatrixError::NotSquare {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    ensure_finite(x)?;
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(x.clone(), f64::EPSILON, 20_000)
        .ok_or(MatrixError::EigenNonConvergence)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Tests `X - shift*I ⪰ 0` via the smallest eigenvalue of the symmetrized
/// matrix. Inputs that are asymmetric beyond tolerance are rejected.
pub fn is_psd(x: &Mat, shift: f64) -> Result<PsdCheck, MatrixError> {
    if x.nrows() != x.ncols() {
        return Err(MatrixError::NotSquare {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    ensure_finite(x)?;
    let norm = x.norm();
    let asymmetry = (x - x.transpose()).norm();
    let tol = SYMMETRY_RTOL * norm.max(1e-300);
    if norm > 0.0 && asymmetry > tol {
        return Err(MatrixError::NotSymmetric { asymmetry, tol });
    }
    let sym = sym_part(x);
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym, f64::EPSILON, 20_000)
        .ok_or(MatrixError::EigenNonConvergence)?;
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let witness = min_eig - shift;
    // Allow only eigen-solver rounding, so positive shifts stay strict.
    let slack = 1e-12 * norm.max(1.0);
    Ok(PsdCheck {
        psd: witness >= -slack,
        min_eigenvalue: witness,
    })
}

/// Solves `A X = B` by partially pivoted LU, reporting singularity when a
/// pivot drops below `SINGULARITY_RTOL * max|A|`.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat, MatrixError> {
    if a.nrows() != a.ncols() {
        return Err(MatrixError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.nrows() != a.nrows() {
        return Err(MatrixError::DimensionMismatch(format!(
            "solve_linear: A is {}x{} but B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    ensure_finite(a)?;
    ensure_finite(b)?;
    let max_entry = a.amax().max(1e-300);
    let tol = SINGULARITY_RTOL * max_entry;
    let lu = a.clone().lu();
    let min_pivot = lu
        .u()
        .diagonal()
        .iter()
        .map(|p| p.abs())
        .fold(f64::INFINITY, f64::min);
    if min_pivot < tol {
        return Err(MatrixError::Singular {
            pivot: min_pivot,
            tol,
        });
    }
    lu.solve(b).ok_or(MatrixError::Singular {
        pivot: min_pivot,
        tol,
    })
}

/// Convenience wrapper of [`solve_linear`] for a single right-hand side.
pub fn solve_vec(a: &Mat, b: &Vector) -> Result<Vector, MatrixError> {
    let x = solve_linear(a, &Mat::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(Vector::from_column_slice(x.as_slice()))
}

/// Symmetric PSD square root, built from a symmetric eigendecomposition
/// with negative rounding noise clipped to zero.
pub fn psd_sqrt(x: &Mat) -> Result<Mat, MatrixError> {
    let check = is_psd(x, 0.0)?;
    if !check.psd {
        return Err(MatrixError::NotSymmetric {
            asymmetry: check.min_eigenvalue,
            tol: 0.0,
        });
    }
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym_part(x), f64::EPSILON, 20_000)
        .ok_or(MatrixError::EigenNonConvergence)?;
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Mat::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn assert_mat_eq(a: &Mat, b: &Mat, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let err = (a - b).amax();
        assert!(err <= tol, "matrix mismatch: max abs err {err:.3e} > {tol:.3e}");
    }

    #[test]
    fn kron_identity_case() {
        let i2 = Mat::identity(2, 2);
        let five = Mat::from_element(1, 1, 5.0);
        assert_mat_eq(&kron(&i2, &five), &Mat::from_diagonal(&Vector::from_vec(vec![5.0, 5.0])), 0.0);
    }

    #[test]
    fn kron_hand_expansion() {
        let x = Mat::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = Mat::from_row_slice(2, 1, &[3.0, 4.0]);
        let expected = Mat::from_row_slice(2, 2, &[3.0, 6.0, 4.0, 8.0]);
        assert_mat_eq(&kron(&x, &y), &expected, 0.0);
    }

    #[test]
    fn vec_col_is_column_major() {
        let x = Mat::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]); // [[a,b],[c,d]] = [[1,3],[2,4]]
        let v = vec_col(&x);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        let id = vec_col(&Mat::identity(2, 2));
        assert_eq!(id.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn commutation_trivial_and_2x2() {
        assert_mat_eq(&commutation_matrix(1, 4), &Mat::identity(4, 4), 0.0);
        let k = commutation_matrix(2, 2);
        let v = Vector::from_vec(vec![1.0, 3.0, 2.0, 4.0]); // vec of [[1,2],[3,4]]
        let vt = &k * v;
        assert_eq!(vt.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    // Appendix-style identity suite on random matrices, exact to 1e-12.
    #[test]
    fn identity_suite_r1_to_r13() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let y = rmat(&mut rng, 2, 3);
            let x = rmat(&mut rng, 3, 3);
            let z = rmat(&mut rng, 3, 2);

            // r1: vec(YXZ) = (Z^T ⊗ Y) vec(X)
            let lhs = vec_col(&(&y * &x * &z));
            let rhs = kron(&z.transpose(), &y) * vec_col(&x);
            assert!((lhs - rhs).amax() <= 1e-12);

            // r2: (X ⊗ Y)^T = X^T ⊗ Y^T
            assert_mat_eq(&kron(&x, &y).transpose(), &kron(&x.transpose(), &y.transpose()), 1e-12);

            // r3: (X ⊗ Y)(W ⊗ Z) = (XW) ⊗ (YZ)
            let w = rmat(&mut rng, 3, 2);
            let z3 = rmat(&mut rng, 3, 3);
            assert_mat_eq(
                &(kron(&x, &y) * kron(&w, &z3)),
                &kron(&(&x * &w), &(&y * &z3)),
                1e-12,
            );

            // r4/r5: vec and transpose are linear.
            let h = rmat(&mut rng, 3, 3);
            assert!((vec_col(&(&x + &h)) - (vec_col(&x) + vec_col(&h))).amax() <= 1e-12);
            assert_mat_eq(&(&x + &h).transpose(), &(x.transpose() + h.transpose()), 1e-12);

            // r6-r8: trace identities.
            assert_relative_eq!((&x + &h).trace(), x.trace() + h.trace(), epsilon = 1e-12);
            let xz = rmat(&mut rng, 3, 2);
            let zx = rmat(&mut rng, 2, 3);
            assert_relative_eq!((&xz * &zx).trace(), (&zx * &xz).trace(), epsilon = 1e-12);
            assert_relative_eq!(x.transpose().trace(), x.trace(), epsilon = 1e-12);

            // r9: tr(Z^T dX) = vec(Z)^T vec(dX)
            let z9 = rmat(&mut rng, 3, 3);
            assert_relative_eq!(
                (z9.transpose() * &h).trace(),
                vec_col(&z9).dot(&vec_col(&h)),
                epsilon = 1e-12
            );

            // r10/r11: commutation transposes under vec, and is orthogonal.
            let k23 = commutation_matrix(2, 3);
            let x23 = rmat(&mut rng, 2, 3);
            assert!((&k23 * vec_col(&x23) - vec_col(&x23.transpose())).amax() <= 1e-12);
            assert_mat_eq(&(k23.transpose() * &k23), &Mat::identity(6, 6), 1e-12);

            // r12: K_{d3,d1}(X ⊗ Y) = (Y ⊗ X) K_{d4,d2} for X d1xd2, Y d3xd4.
            for &(d1, d2, d3, d4) in &[(2usize, 3usize, 3usize, 2usize), (4, 5, 2, 3), (3, 4, 4, 5)] {
                let xa = rmat(&mut rng, d1, d2);
                let yb = rmat(&mut rng, d3, d4);
                let lhs = commutation_matrix(d3, d1) * kron(&xa, &yb);
                let rhs = kron(&yb, &xa) * commutation_matrix(d4, d2);
                assert_mat_eq(&lhs, &rhs, 1e-12);
            }

            // r13: K_{d,d} is symmetric.
            let kdd = commutation_matrix(3, 3);
            assert_mat_eq(&kdd, &kdd.transpose(), 0.0);
        }
    }

    #[test]
    fn commutation_orthogonal_up_to_4x5() {
        for d1 in 1..=4 {
            for d2 in 1..=5 {
                let k = commutation_matrix(d1, d2);
                let n = d1 * d2;
                assert_mat_eq(&(k.transpose() * &k), &Mat::identity(n, n), 1e-15);
            }
        }
    }

    #[test]
    fn spectral_radius_examples() {
        let d = Mat::from_diagonal(&Vector::from_vec(vec![2.0, 1.0]));
        assert_relative_eq!(spectral_radius(&d).unwrap(), 2.0, epsilon = 1e-12);

        // Leslie with all fecundities zero: strictly lower shift, nilpotent.
        let mut shift = Mat::zeros(4, 4);
        for i in 0..3 {
            shift[(i + 1, i)] = 0.5;
        }
        assert!(spectral_radius(&shift).unwrap() <= 1e-8);

        let rot = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn spectral_radius_similarity_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let x = rmat(&mut rng, 4, 4);
            let t = Mat::identity(4, 4) + rmat(&mut rng, 4, 4) * 0.3;
            let t_inv = solve_linear(&t, &Mat::identity(4, 4)).unwrap();
            let sim = &t_inv * &x * &t;
            let a = spectral_radius(&x).unwrap();
            let b = spectral_radius(&sim).unwrap();
            assert!((a - b).abs() <= 1e-8 * (1.0 + a), "{a} vs {b}");
        }
    }

    #[test]
    fn spectral_radius_rejects_bad_input() {
        let rect = Mat::zeros(2, 3);
        assert!(matches!(spectral_radius(&rect), Err(MatrixError::NotSquare { .. })));
        let mut nan = Mat::zeros(2, 2);
        nan[(0, 0)] = f64::NAN;
        assert!(matches!(spectral_radius(&nan), Err(MatrixError::NonFinite)));
    }

    #[test]
    fn is_psd_examples() {
        let ok = is_psd(&Mat::identity(2, 2), 0.0).unwrap();
        assert!(ok.psd);

        let ind = is_psd(&Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1.0])), 0.0).unwrap();
        assert!(!ind.psd);
        assert_relative_eq!(ind.min_eigenvalue, -1.0, epsilon = 1e-10);

        // Semidefinite fails a strict shift.
        let semi = is_psd(&Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.0])), 1e-5).unwrap();
        assert!(!semi.psd);

        let mut asym = Mat::identity(2, 2);
        asym[(0, 1)] = 0.5;
        assert!(matches!(is_psd(&asym, 0.0), Err(MatrixError::NotSymmetric { .. })));
    }

    /// Cyclic Jacobi eigenvalue sweep, used as an oracle independent of the
    /// library eigen-solver.
    fn jacobi_min_eigenvalue(a: &Mat) -> f64 {
        let n = a.nrows();
        let mut m = a.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[(p, q)] * m[(p, q)];
                }
            }
            if off <= 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[(p, q)].abs() <= 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (m[(q, q)] - m[(p, p)]) / m[(p, q)];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let mut rot = Mat::identity(n, n);
                    rot[(p, p)] = c;
                    rot[(q, q)] = c;
                    rot[(p, q)] = s;
                    rot[(q, p)] = -s;
                    m = rot.transpose() * m * rot;
                }
            }
        }
        (0..n).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn is_psd_agrees_with_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let a = rmat(&mut rng, 5, 5);
            let sym = sym_part(&a);
            let check = is_psd(&sym, 0.0).unwrap();
            let oracle = jacobi_min_eigenvalue(&sym);
            assert_relative_eq!(check.min_eigenvalue, oracle, epsilon = 1e-8);
            assert_eq!(check.psd, oracle >= -1e-12 * sym.norm().max(1.0));
        }
    }

    #[test]
    fn solve_linear_examples() {
        let b = Mat::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = solve_linear(&Mat::identity(3, 3), &b).unwrap();
        assert_mat_eq(&x, &b, 0.0);

        let x = solve_linear(&Mat::from_element(1, 1, 2.0), &Mat::from_element(1, 1, 4.0)).unwrap();
        assert_relative_eq!(x[(0, 0)], 2.0);

        let sing = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_linear(&sing, &Mat::identity(2, 2)),
            Err(MatrixError::Singular { .. })
        ));
    }

    #[test]
    fn solve_linear_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = rmat(&mut rng, 6, 6) + Mat::identity(6, 6) * 2.0;
            let b = rmat(&mut rng, 6, 3);
            let x = solve_linear(&a, &b).unwrap();
            assert!((&a * &x - &b).norm() <= 1e-10 * b.norm().max(1.0));
        }
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = rmat(&mut rng, 4, 4);
            let q = &a * a.transpose();
            let root = psd_sqrt(&q).unwrap();
            assert!((&root * &root - &q).amax() <= 1e-9 * q.norm().max(1.0));
        }
    }
}
