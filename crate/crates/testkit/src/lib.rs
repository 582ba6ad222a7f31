//! Independent numerical oracles and random-instance generators for the cimpe
//! test suites.
//!
//! Everything in this crate deliberately avoids the code paths of `cimpe-core`:
//! eigenvalues come from a characteristic-polynomial root finder instead of a
//! matrix eigensolver, Stein equations are solved by fixed-point iteration
//! instead of a linear solve, and Gaussian sampling uses an explicit symmetric
//! square root. Tests compare the production implementations against these
//! oracles so that a shared bug cannot hide.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

// ---- seeding -------------------------------------------------------------

/// SplitMix64 finalizer; mixes a base seed with a stream index so that
/// per-sample generators are decorrelated and order-independent.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for tests.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- random matrices -----------------------------------------------------

/// Dense matrix with i.i.d. N(0, scale^2) entries.
pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        scale * z
    })
}

/// Random matrix of exact rank `rank` (<= min(rows, cols)), built as a product
/// of thin Gaussian factors.
pub fn random_rank_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, rank: usize) -> Matrix {
    assert!(rank <= rows.min(cols));
    if rank == 0 {
        return Matrix::zeros(rows, cols);
    }
    let left = random_matrix(rng, rows, rank, 1.0);
    let right = random_matrix(rng, rank, cols, 1.0);
    left * right
}

/// Random symmetric positive semidefinite matrix of exact rank `rank`.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, rank: usize, scale: f64) -> Matrix {
    let f = random_matrix(rng, n, rank, scale);
    let m = &f * f.transpose();
    symmetrize(&m)
}

/// Random matrix with full row rank (rows <= cols), rejection-sampled on the
/// smallest singular value so downstream pseudo-inverses are well conditioned.
pub fn random_full_row_rank<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    assert!(rows <= cols);
    loop {
        let m = random_matrix(rng, rows, cols, 1.0);
        let svals = m.clone().singular_values();
        if svals.iter().all(|s| *s > 1e-3) {
            return m;
        }
    }
}

/// (M + M^T) / 2.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

// ---- Gaussian sampling ---------------------------------------------------

/// Symmetric square-root factor of a PSD matrix via its eigendecomposition.
/// Tiny negative eigenvalues from roundoff are clamped to zero.
pub fn psd_sqrt(cov: &Matrix) -> Matrix {
    assert_eq!(cov.nrows(), cov.ncols());
    if cov.nrows() == 0 {
        return cov.clone();
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(cov));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        assert!(*v > -1e-9, "psd_sqrt given an indefinite matrix (eig {v})");
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// One draw from N(0, S S^T) given a square-root factor S.
pub fn sample_zero_mean<R: Rng>(rng: &mut R, sqrt_factor: &Matrix) -> Vector {
    let z = Vector::from_fn(sqrt_factor.ncols(), |_, _| rng.sample(StandardNormal));
    sqrt_factor * z
}

// ---- eigenvalue oracle ---------------------------------------------------

/// Coefficients of det(lambda I - A) in ascending powers (c[0] + c[1] l + ...
/// + c[n] l^n with c[n] = 1), computed with the Faddeev-LeVerrier recursion.
pub fn char_poly(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = Matrix::zeros(n, n);
    for k in 1..=n {
        // M_k = A * M_{k-1} + c_{n-k+1} I
        m = a * &m;
        let c_prev = coeffs[n - k + 1];
        for i in 0..n {
            m[(i, i)] += c_prev;
        }
        let am = a * &m;
        coeffs[n - k] = -am.trace() / (k as f64);
    }
    coeffs
}

/// All complex roots of a monic polynomial (ascending coefficients, last = 1)
/// via Durand-Kerner iteration.
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let n = coeffs.len() - 1;
    assert!((coeffs[n] - 1.0).abs() < 1e-12, "polynomial must be monic");
    if n == 0 {
        return Vec::new();
    }
    let eval = |z: Complex<f64>| -> Complex<f64> {
        let mut acc = Complex::new(coeffs[n], 0.0);
        for k in (0..n).rev() {
            acc = acc * z + Complex::new(coeffs[k], 0.0);
        }
        acc
    };
    // Radius bound keeps the seed circle outside no root.
    let bound = 1.0 + coeffs[..n].iter().map(|c| c.abs()).fold(0.0f64, f64::max);
    let seed = Complex::new(0.4, 0.9);
    let mut roots: Vec<Complex<f64>> = (0..n)
        .map(|i| seed.powu(i as u32 + 1) / seed.norm() * bound.min(4.0))
        .collect();
    for _ in 0..600 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-14 * (1.0 + bound) {
            break;
        }
    }
    roots
}

/// Spectral radius through the characteristic polynomial route. Intended for
/// small matrices (n <= 8); root finding on larger characteristic polynomials
/// is too ill-conditioned to serve as an oracle.
pub fn spectral_radius_oracle(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    poly_roots(&char_poly(a))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

// ---- Stein equation oracle -------------------------------------------------

/// Solves D + P1 D P2 = P3 by the fixed-point iteration
/// D_{k+1} = P3 - P1 D_k P2, which converges whenever
/// rho(P1) * rho(P2) < 1. Returns None if the iteration fails to settle.
pub fn stein_fixed_point(p1: &Matrix, p2: &Matrix, p3: &Matrix, max_iter: usize) -> Option<Matrix> {
    let mut d = p3.clone();
    for _ in 0..max_iter {
        let next = p3 - p1 * &d * p2;
        let step = (&next - &d).norm();
        d = next;
        if step <= 1e-15 * (1.0 + d.norm()) {
            return Some(d);
        }
    }
    None
}

// ---- statistics ------------------------------------------------------------

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, Default)]
pub struct RunningMoments {
    pub count: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count.max(1) as f64).sqrt()
    }
}

/// Exact minimizer of a quadratic function of `dim` variables, reconstructed
/// from function values alone: evaluations at +-h along every axis give the
/// gradient and diagonal curvature, evaluations at paired offsets give the
/// mixed curvature, and the stationary point solves `H d = -g`. For a true
/// quadratic the step size h introduces no truncation error. Returns the
/// argmin offset from the origin; singular or indefinite Hessians fall back
/// to an SVD least-squares solve.
pub fn quadratic_argmin(dim: usize, mut eval: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 0.5;
    let f0 = eval(&vec![0.0; dim]);
    let mut grad = DVector::<f64>::zeros(dim);
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    let mut at_plus = vec![0.0; dim];
    for k in 0..dim {
        let mut probe = vec![0.0; dim];
        probe[k] = h;
        let f_plus = eval(&probe);
        probe[k] = -h;
        let f_minus = eval(&probe);
        grad[k] = (f_plus - f_minus) / (2.0 * h);
        hess[(k, k)] = (f_plus + f_minus - 2.0 * f0) / (h * h);
        at_plus[k] = f_plus;
    }
    for a in 0..dim {
        for b in a + 1..dim {
            let mut probe = vec![0.0; dim];
            probe[a] = h;
            probe[b] = h;
            let mixed = (eval(&probe) - at_plus[a] - at_plus[b] + f0) / (h * h);
            hess[(a, b)] = mixed;
            hess[(b, a)] = mixed;
        }
    }
    let step = match hess.clone().cholesky() {
        Some(chol) => chol.solve(&(-&grad)),
        None => hess.svd(true, true).solve(&(-grad), 1e-12).expect("svd solve"),
    };
    step.iter().cloned().collect()
}

/// Upper quantile of the chi-square distribution via the Wilson-Hilferty cube
/// approximation (relative error well under 1% for df >= 2, ample for test
/// gates at the 1% level).
pub fn chi_square_quantile(df: usize, p: f64) -> f64 {
    let z = standard_normal_quantile(p);
    let k = df as f64;
    let h = 2.0 / (9.0 * k);
    k * (1.0 - h + z * h.sqrt()).powi(3)
}

/// Inverse standard normal CDF (Acklam's rational approximation, |eps| < 1.2e-9).
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -standard_normal_quantile(1.0 - p)
    }
}

/// Two-sample chi-square homogeneity statistic over shared bins. Bins where
/// both samples are empty are dropped; returns (statistic, degrees of freedom).
pub fn two_sample_chi_square(counts_a: &[u64], counts_b: &[u64]) -> (f64, usize) {
    assert_eq!(counts_a.len(), counts_b.len());
    let total_a: u64 = counts_a.iter().sum();
    let total_b: u64 = counts_b.iter().sum();
    assert!(total_a > 0 && total_b > 0);
    let mut stat = 0.0;
    let mut used_bins = 0usize;
    for (&a, &b) in counts_a.iter().zip(counts_b) {
        let row = a + b;
        if row == 0 {
            continue;
        }
        used_bins += 1;
        for (obs, tot) in [(a as f64, total_a as f64), (b as f64, total_b as f64)] {
            let expect = tot * row as f64 / (total_a + total_b) as f64;
            stat += (obs - expect).powi(2) / expect;
        }
    }
    (stat, used_bins.saturating_sub(1))
}
