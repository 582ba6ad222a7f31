//! Cross-checks of the linear-algebra kernels against the independent
//! oracles in `cimpe-testkit`: the pseudoinverse against its defining
//! identities, the spectral radius against characteristic-polynomial roots,
//! and the Stein solver against both fixed-point iteration and a direct
//! Kronecker-product assembly.

use cimpe_core::linalg::{
    gaussian_condition, penrose_defect, pinv, solve_stein, spectral_radius, Matrix, Vector,
};
use cimpe_testkit as kit;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn penrose_identities_hold_for_mixed_shapes() {
    let mut rng = kit::rng(41);
    for trial in 0..300 {
        let rows = 1 + rng.gen_range(0..6);
        let cols = 1 + rng.gen_range(0..6);
        let m = if trial % 3 == 0 {
            let rank = 1 + rng.gen_range(0..rows.min(cols));
            kit::random_rank_matrix(&mut rng, rows, cols, rank)
        } else {
            let scale = 10f64.powi(rng.gen_range(-2..3));
            kit::random_matrix(&mut rng, rows, cols, scale)
        };
        let defect = penrose_defect(&m, &pinv(&m));
        assert!(defect <= 1e-8, "trial {trial}: defect {defect}");
    }
}

#[test]
fn pseudoinverse_of_orthogonal_projection_is_itself() {
    let mut rng = kit::rng(42);
    let basis = kit::random_full_row_rank(&mut rng, 2, 5);
    let gram_inv = pinv(&(&basis * basis.transpose()));
    let projection = basis.transpose() * gram_inv * &basis;
    assert!((pinv(&projection) - &projection).norm() < 1e-10);
}

#[test]
fn spectral_radius_matches_characteristic_roots() {
    let mut rng = kit::rng(43);
    for _ in 0..200 {
        let n = 1 + rng.gen_range(0..5);
        let m = kit::random_matrix(&mut rng, n, n, 2.0);
        let fast = spectral_radius(&m).unwrap();
        let oracle = kit::spectral_radius_oracle(&m);
        assert!(
            (fast - oracle).abs() <= 1e-6 * (1.0 + oracle),
            "eigensolver {fast} vs root finder {oracle}"
        );
    }
}

/// Random triple with `rho(P1) * rho(P2) < 1`, so both solution routes apply.
fn contraction_triple(rng: &mut rand_chacha::ChaCha8Rng) -> (Matrix, Matrix, Matrix) {
    let n = 1 + rng.gen_range(0..4);
    let k = 1 + rng.gen_range(0..4);
    let mut p1 = kit::random_matrix(rng, n, n, 1.0);
    let mut p2 = kit::random_matrix(rng, k, k, 1.0);
    let damp = |m: &mut Matrix| {
        let rho = kit::spectral_radius_oracle(m);
        if rho > 0.0 {
            *m *= 0.65 / rho.max(0.65);
        }
    };
    damp(&mut p1);
    damp(&mut p2);
    let p3 = kit::random_matrix(rng, n, k, 3.0);
    (p1, p2, p3)
}

#[test]
fn stein_solver_matches_fixed_point_iteration() {
    let mut rng = kit::rng(44);
    for trial in 0..200 {
        let (p1, p2, p3) = contraction_triple(&mut rng);
        let direct = solve_stein(&p1, &p2, &p3).unwrap();
        let iterated = kit::stein_fixed_point(&p1, &p2, &p3, 20_000).expect("iteration settles");
        let gap = (&direct - &iterated).norm();
        assert!(gap <= 1e-9 * (1.0 + direct.norm()), "trial {trial}: gap {gap}");
    }
}

#[test]
fn stein_solver_matches_kronecker_assembly() {
    let mut rng = kit::rng(45);
    for _ in 0..100 {
        let (p1, p2, p3) = contraction_triple(&mut rng);
        let (n, k) = (p1.nrows(), p2.nrows());
        // vec(D) + (P2' kron P1) vec(D) = vec(P3), with column-major vec.
        let system = Matrix::identity(n * k, n * k) + p2.transpose().kronecker(&p1);
        let rhs = Vector::from_iterator(n * k, p3.iter().cloned());
        let solved = system.lu().solve(&rhs).expect("nonsingular");
        let oracle = Matrix::from_iterator(n, k, solved.iter().cloned());
        let direct = solve_stein(&p1, &p2, &p3).unwrap();
        assert!((direct - &oracle).norm() <= 1e-9 * (1.0 + oracle.norm()));
    }
}

#[test]
fn conditioning_satisfies_normal_equations() {
    let mut rng = kit::rng(46);
    for trial in 0..100 {
        let n = 1 + rng.gen_range(0..3);
        let k = 1 + rng.gen_range(0..4);
        // Build a consistent joint covariance of (X, Y), singular every third trial.
        let rank = if trial % 3 == 0 { 1 + rng.gen_range(0..k) } else { k + n };
        let joint = kit::random_psd(&mut rng, n + k, rank.min(n + k), 1.0);
        let cov_xx = joint.view((0, 0), (n, n)).into_owned();
        let cov_xy = joint.view((0, n), (n, k)).into_owned();
        let cov_yy = joint.view((n, n), (k, k)).into_owned();
        let mean_x = Vector::from_fn(n, |_, _| rng.gen::<f64>());
        let mean_y = Vector::from_fn(k, |_, _| rng.gen::<f64>());
        let cond = gaussian_condition(&mean_x, &mean_y, &cov_xx, &cov_xy, &cov_yy).unwrap();

        // Gain solves gain * cov_yy = cov_xy on the support of Y.
        let residual = (&cond.gain * &cov_yy - &cov_xy).norm();
        assert!(residual <= 1e-9 * (1.0 + cov_xy.norm()), "trial {trial}: {residual}");
        // Offset reproduces the unconditional mean.
        let mean_residual = (&cond.offset + &cond.gain * &mean_y - &mean_x).norm();
        assert!(mean_residual <= 1e-12 * (1.0 + mean_x.norm()));
        // Residual covariance is symmetric PSD and below cov_xx.
        let min_eig = cond
            .cov
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-9);
        assert!(cond.cov.trace() <= cov_xx.trace() + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penrose_identities_hold_under_scaling(
        seed in any::<u64>(),
        rows in 1usize..5,
        cols in 1usize..5,
        log_scale in -6i32..7,
    ) {
        let mut rng = kit::rng(seed);
        let m = kit::random_matrix(&mut rng, rows, cols, 10f64.powi(log_scale));
        prop_assert!(penrose_defect(&m, &pinv(&m)) <= 1e-7);
    }

    #[test]
    fn stein_residual_vanishes_on_random_contractions(seed in any::<u64>()) {
        let mut rng = kit::rng(seed);
        let (p1, p2, p3) = contraction_triple(&mut rng);
        let d = solve_stein(&p1, &p2, &p3).unwrap();
        let residual = (&d + &p1 * &d * &p2 - &p3).norm();
        prop_assert!(residual <= 1e-10 * (1.0 + p3.norm()));
    }
}
