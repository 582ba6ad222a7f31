//! Dense linear-algebra utilities underpinning the solver: Moore-Penrose
//! pseudo-inverses, spectral radii, Stein equations and Gaussian conditioning.
//!
//! Everything operates on `f64` dynamic matrices. Conventions:
//!
//! * `pinv` uses an SVD with the cutoff `max(rows, cols) * eps * sigma_max`,
//!   so rank decisions scale with the matrix.
//! * `solve_stein` solves `D + P1 * D * P2 = P3` by vectorization,
//!   `(I + P2^T (x) P1) vec(D) = vec(P3)`, and rejects solutions whose
//!   residual exceeds `1e-9 * (1 + ||P3||_F)`.
//! * `gaussian_condition` computes the conditional law of a jointly Gaussian
//!   pair: gain `S_xy S_yy^+`, covariance `S_xx - gain S_xy^T`. The
//!   conditional covariance is symmetrized and eigenvalue-clipped; eigenvalues
//!   in `[-1e-10, 0)` are treated as roundoff and set to zero, anything more
//!   negative is an error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalues of a repaired covariance may be negative by at most this much.
pub const PSD_CLIP_TOLERANCE: f64 = 1e-10;

/// Relative residual bound accepted from the Stein solver.
pub const STEIN_RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error(
        "covariance is indefinite: eigenvalue {eigenvalue:.6e} is below the \
         clip tolerance -{tolerance:.1e}"
    )]
    IndefiniteCovariance { eigenvalue: f64, tolerance: f64 },
    #[error("linear system is singular or inconsistent (residual {residual:.3e}, bound {bound:.3e})")]
    SingularSystem { residual: f64, bound: f64 },
}

// ---- block helpers ---------------------------------------------------------

/// Stacks blocks vertically. All blocks must share a column count; an empty
/// list yields a 0x0 matrix.
pub fn vstack(blocks: &[Matrix]) -> Matrix {
    let cols = blocks.iter().map(Matrix::ncols).max().unwrap_or(0);
    let rows: usize = blocks.iter().map(Matrix::nrows).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert!(b.ncols() == cols || b.nrows() == 0);
        out.view_mut((r, 0), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Stacks blocks horizontally.
pub fn hstack(blocks: &[Matrix]) -> Matrix {
    let rows = blocks.iter().map(Matrix::nrows).max().unwrap_or(0);
    let cols: usize = blocks.iter().map(Matrix::ncols).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert!(b.nrows() == rows || b.ncols() == 0);
        out.view_mut((0, c), (b.nrows(), b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(Matrix::nrows).sum();
    let cols: usize = blocks.iter().map(Matrix::ncols).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

// ---- pseudo-inverse --------------------------------------------------------

/// Moore-Penrose pseudo-inverse. Singular values at or below
/// `max(rows, cols) * eps * sigma_max` are treated as zero.
///
/// The bidiagonalization SVD occasionally returns orthogonal factors whose
/// product does not reconstruct the input, so the result is checked against
/// the defining identities and recomputed with a one-sided Jacobi SVD when
/// the check fails.
pub fn pinv(m: &Matrix) -> Matrix {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Matrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * sigma_max;
    let fast = svd
        .pseudo_inverse(cutoff)
        .expect("pseudo_inverse with non-negative cutoff cannot fail");
    let bound = 1e-10 * (1.0 + m.norm()) * (1.0 + fast.norm());
    if penrose_defect(m, &fast) <= bound {
        return fast;
    }
    jacobi_pinv(m)
}

/// Pseudo-inverse through a one-sided Jacobi SVD: right rotations
/// orthogonalize the columns of the (possibly transposed) input, the
/// accumulated rotations form `V`, and the column norms are the singular
/// values. Slower than the bidiagonalization route but converges on inputs
/// where that route stalls.
fn jacobi_pinv(m: &Matrix) -> Matrix {
    let transposed = m.nrows() < m.ncols();
    let mut b = if transposed { m.transpose() } else { m.clone() };
    let n = b.ncols();
    let mut v = Matrix::identity(n, n);

    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let app = b.column(p).norm_squared();
                let aqq = b.column(q).norm_squared();
                let apq = b.column(p).dot(&b.column(q));
                if apq.abs() <= f64::EPSILON * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                for mat in [&mut b, &mut v] {
                    for r in 0..mat.nrows() {
                        let mp = mat[(r, p)];
                        let mq = mat[(r, q)];
                        mat[(r, p)] = cos * mp - sin * mq;
                        mat[(r, q)] = sin * mp + cos * mq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    let sigma_max = norms.iter().cloned().fold(0.0, f64::max);
    let cutoff = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * sigma_max;
    let mut p = Matrix::zeros(n, b.nrows());
    for j in 0..n {
        if norms[j] > cutoff {
            p += v.column(j) * b.column(j).transpose() / (norms[j] * norms[j]);
        }
    }
    if transposed { p.transpose() } else { p }
}

/// Largest violation of the four Penrose identities, used by the test suites:
/// `max(||M P M - M||, ||P M P - P||, ||(M P)^T - M P||, ||(P M)^T - P M||)`.
pub fn penrose_defect(m: &Matrix, p: &Matrix) -> f64 {
    let mp = m * p;
    let pm = p * m;
    [
        (&mp * m - m).norm(),
        (&pm * p - p).norm(),
        (mp.transpose() - &mp).norm(),
        (pm.transpose() - &pm).norm(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

// ---- spectral quantities ----------------------------------------------------

/// Spectral radius (largest eigenvalue modulus) of a square matrix. The 0x0
/// matrix has spectral radius 0 by convention.
pub fn spectral_radius(m: &Matrix) -> Result<f64, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest singular value; 0 for empty matrices.
pub fn max_singular_value(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Smallest singular value of a square matrix (0 for empty), used to report
/// how close a coupled solve is to losing uniqueness.
pub fn min_singular_value(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

// ---- Stein equation ----------------------------------------------------------

/// Solves `D + P1 * D * P2 = P3` for `D` by LU on the vectorized system
/// `(I + P2^T (x) P1) vec(D) = vec(P3)`.
///
/// The equation has a unique solution iff no product of an eigenvalue of `P1`
/// with one of `P2` equals -1. A solution is accepted only when its residual
/// is below `STEIN_RESIDUAL_TOLERANCE * (1 + ||P3||_F)`.
pub fn solve_stein(p1: &Matrix, p2: &Matrix, p3: &Matrix) -> Result<Matrix, LinalgError> {
    let m = p1.nrows();
    let n = p2.nrows();
    if p1.ncols() != m {
        return Err(LinalgError::NotSquare { rows: p1.nrows(), cols: p1.ncols() });
    }
    if p2.ncols() != n {
        return Err(LinalgError::NotSquare { rows: p2.nrows(), cols: p2.ncols() });
    }
    if p3.nrows() != m || p3.ncols() != n {
        return Err(LinalgError::DimensionMismatch {
            context: format!(
                "right-hand side is {}x{}, expected {}x{}",
                p3.nrows(),
                p3.ncols(),
                m,
                n
            ),
        });
    }
    if m == 0 || n == 0 {
        return Ok(Matrix::zeros(m, n));
    }
    let mut system = p2.transpose().kronecker(p1);
    for i in 0..m * n {
        system[(i, i)] += 1.0;
    }
    let rhs = Vector::from_iterator(m * n, p3.iter().cloned());
    let bound = STEIN_RESIDUAL_TOLERANCE * (1.0 + p3.norm());
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or(LinalgError::SingularSystem { residual: f64::INFINITY, bound })?;
    let d = Matrix::from_iterator(m, n, solution.iter().cloned());
    let residual = (&d + p1 * &d * p2 - p3).norm();
    if residual > bound {
        return Err(LinalgError::SingularSystem { residual, bound });
    }
    Ok(d)
}

// ---- Gaussian conditioning -----------------------------------------------------

/// Conditional law of `x` given `y` for a jointly Gaussian pair.
#[derive(Debug, Clone)]
pub struct Conditioned {
    /// Maps a realization of `y` to the conditional-mean update:
    /// `E[x | y] = offset + gain * y`.
    pub gain: Matrix,
    pub offset: Vector,
    /// Conditional covariance (independent of the realization).
    pub cov: Matrix,
}

/// Gaussian conditioning with pseudo-inverse innovation weighting, so
/// degenerate (rank-deficient) `y` covariances are handled exactly.
pub fn gaussian_condition(
    mean_x: &Vector,
    mean_y: &Vector,
    cov_xx: &Matrix,
    cov_xy: &Matrix,
    cov_yy: &Matrix,
) -> Result<Conditioned, LinalgError> {
    let nx = mean_x.len();
    let ny = mean_y.len();
    if cov_xx.nrows() != nx
        || cov_xx.ncols() != nx
        || cov_xy.nrows() != nx
        || cov_xy.ncols() != ny
        || cov_yy.nrows() != ny
        || cov_yy.ncols() != ny
    {
        return Err(LinalgError::DimensionMismatch {
            context: format!(
                "conditioning blocks ({}x{}, {}x{}, {}x{}) inconsistent with means ({}, {})",
                cov_xx.nrows(),
                cov_xx.ncols(),
                cov_xy.nrows(),
                cov_xy.ncols(),
                cov_yy.nrows(),
                cov_yy.ncols(),
                nx,
                ny
            ),
        });
    }
    let gain = cov_xy * pinv(cov_yy);
    let offset = mean_x - &gain * mean_y;
    let cov = clip_psd(&(cov_xx - &gain * cov_xy.transpose()), PSD_CLIP_TOLERANCE)?;
    Ok(Conditioned { gain, offset, cov })
}

/// Symmetrizes `m` and clips slightly negative eigenvalues to zero. Fails if
/// any eigenvalue is below `-tolerance`.
pub fn clip_psd(m: &Matrix, tolerance: f64) -> Result<Matrix, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -tolerance {
            return Err(LinalgError::IndefiniteCovariance { eigenvalue: *v, tolerance });
        }
        *v = v.max(0.0);
    }
    let repaired = &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok(symmetrize(&repaired))
}

/// Minimum eigenvalue of a symmetric matrix (`+inf` for the empty matrix).
pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    nalgebra::SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_inverts_nonsingular_matrices() {
        let m = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 2.0, 3.0]);
        let p = pinv(&m);
        assert_relative_eq!((p * &m), Matrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn pinv_of_zero_and_empty_matrices() {
        let z = Matrix::zeros(2, 3);
        assert_eq!(pinv(&z), Matrix::zeros(3, 2));
        let e = Matrix::zeros(0, 3);
        assert_eq!(pinv(&e), Matrix::zeros(3, 0));
    }

    #[test]
    fn pinv_satisfies_penrose_identities_on_rank_deficient_input() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        let p = pinv(&m);
        assert!(penrose_defect(&m, &p) < 1e-12);
    }

    #[test]
    fn pinv_recovers_when_the_fast_svd_misconverges() {
        // A rank-3 4x6 matrix on which the bidiagonalization SVD returns
        // orthogonal factors that reconstruct the input only to ~4e-4,
        // leaving a Penrose defect of ~1e-2 without the Jacobi fallback.
        let m = Matrix::from_iterator(
            4,
            6,
            [
                -0.0076446411006297985,
                0.011830624931587246,
                -0.005942023208170926,
                -0.00770670827481656,
                0.006597954100113205,
                -0.012916316832362369,
                -0.014742729625236995,
                0.01540384224907993,
                0.015569741990187926,
                0.013852765993481944,
                -0.0030826080285506706,
                0.030754209916741344,
                -0.008800148630064949,
                0.02844677052062648,
                -0.014095960493612872,
                -0.002367614203844245,
                0.0007054691211361147,
                0.027316195504835133,
                0.02922610180384729,
                -0.006794686366946732,
                0.009611990191995132,
                -0.007774020197336975,
                0.018729747358142177,
                0.005895887682110857,
            ]
            .iter()
            .cloned(),
        );
        let p = pinv(&m);
        assert!(penrose_defect(&m, &p) < 1e-12, "defect {}", penrose_defect(&m, &p));
    }

    #[test]
    fn jacobi_route_agrees_with_the_fast_route_on_clean_input() {
        // The pseudo-inverse is unique, so on inputs where the fast SVD is
        // healthy both routes must produce the same matrix.
        let m = Matrix::from_row_slice(
            3,
            4,
            &[1.0, -2.0, 0.5, 3.0, 0.0, 1.5, -1.0, 2.0, 4.0, 0.25, 2.0, -3.0],
        );
        let fast = pinv(&m);
        let slow = jacobi_pinv(&m);
        assert!((&fast - &slow).norm() < 1e-12, "routes differ by {}", (&fast - &slow).norm());
        assert!(penrose_defect(&m, &slow) < 1e-12);

        let wide_rank_deficient =
            Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let slow = jacobi_pinv(&wide_rank_deficient);
        assert!(penrose_defect(&wide_rank_deficient, &slow) < 1e-12);
    }

    #[test]
    fn spectral_radius_known_cases() {
        assert_eq!(spectral_radius(&Matrix::zeros(0, 0)).unwrap(), 0.0);
        let rot = Matrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 0.5, epsilon = 1e-12);
        let ones = Matrix::from_element(2, 2, 1.0);
        assert_relative_eq!(spectral_radius(&ones).unwrap(), 2.0, epsilon = 1e-12);
        assert!(spectral_radius(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn singular_value_extremes() {
        let m = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.5]);
        assert_relative_eq!(max_singular_value(&m), 3.0, epsilon = 1e-12);
        assert_relative_eq!(min_singular_value(&m), 0.5, epsilon = 1e-12);
        assert_eq!(max_singular_value(&Matrix::zeros(0, 2)), 0.0);
    }

    #[test]
    fn stein_scalar_case() {
        let d = solve_stein(
            &Matrix::from_element(1, 1, 0.5),
            &Matrix::from_element(1, 1, 0.5),
            &Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(d[(0, 0)], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn stein_detects_singular_operator() {
        // D + 1 * D * (-1) = P3 collapses to 0 = P3, which is inconsistent.
        let err = solve_stein(
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, -1.0),
            &Matrix::from_element(1, 1, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, LinalgError::SingularSystem { .. }));
    }

    #[test]
    fn stein_rejects_bad_shapes() {
        let err = solve_stein(
            &Matrix::zeros(2, 2),
            &Matrix::zeros(1, 1),
            &Matrix::zeros(1, 1),
        )
        .unwrap_err();
        assert!(matches!(err, LinalgError::DimensionMismatch { .. }));
    }

    #[test]
    fn stein_empty_dimensions_yield_empty_solution() {
        let d = solve_stein(&Matrix::zeros(0, 0), &Matrix::zeros(2, 2), &Matrix::zeros(0, 2))
            .unwrap();
        assert_eq!(d.shape(), (0, 2));
    }

    #[test]
    fn conditioning_scalar_signal_plus_noise() {
        // x ~ N(0,1), y = x + n with n ~ N(0,1): gain 1/2, residual var 1/2.
        let c = gaussian_condition(
            &Vector::zeros(1),
            &Vector::zeros(1),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(c.gain[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.cov[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn conditioning_on_nothing_returns_prior() {
        let c = gaussian_condition(
            &Vector::from_element(2, 1.5),
            &Vector::zeros(0),
            &Matrix::identity(2, 2),
            &Matrix::zeros(2, 0),
            &Matrix::zeros(0, 0),
        )
        .unwrap();
        assert_eq!(c.gain.shape(), (2, 0));
        assert_eq!(c.offset, Vector::from_element(2, 1.5));
        assert_eq!(c.cov, Matrix::identity(2, 2));
    }

    #[test]
    fn conditioning_on_degenerate_observation_is_exact() {
        // y = x with zero noise: conditional covariance must vanish.
        let c = gaussian_condition(
            &Vector::zeros(1),
            &Vector::zeros(1),
            &Matrix::from_element(1, 1, 2.0),
            &Matrix::from_element(1, 1, 2.0),
            &Matrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(c.gain[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(c.cov[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn conditioning_rejects_inconsistent_blocks() {
        // Claimed joint is not PSD: Var(x)=0 but Cov(x,y)=1.
        let err = gaussian_condition(
            &Vector::zeros(1),
            &Vector::zeros(1),
            &Matrix::zeros(1, 1),
            &Matrix::from_element(1, 1, 1.0),
            &Matrix::from_element(1, 1, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, LinalgError::IndefiniteCovariance { .. }));
    }

    #[test]
    fn clip_psd_repairs_roundoff_but_rejects_real_negatives() {
        let slightly = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1e-12]));
        let fixed = clip_psd(&slightly, PSD_CLIP_TOLERANCE).unwrap();
        assert!(fixed[(1, 1)] >= 0.0);
        let bad = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1e-6]));
        assert!(clip_psd(&bad, PSD_CLIP_TOLERANCE).is_err());
    }

    #[test]
    fn block_helpers_assemble_expected_shapes() {
        let a = Matrix::from_element(1, 2, 1.0);
        let b = Matrix::from_element(2, 2, 2.0);
        assert_eq!(vstack(&[a.clone(), b.clone()]).shape(), (3, 2));
        assert_eq!(hstack(&[b.clone(), Matrix::zeros(2, 1)]).shape(), (2, 3));
        let d = block_diag(&[a, b]);
        assert_eq!(d.shape(), (3, 4));
        assert_eq!(d[(0, 0)], 1.0);
        assert_eq!(d[(1, 2)], 2.0);
        assert_eq!(d[(0, 2)], 0.0);
    }
}
