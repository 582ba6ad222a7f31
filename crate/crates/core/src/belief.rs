//! Conditional-belief propagation over the common information.
//!
//! Let `S_t = (X_t, P1_t, P2_t)` stack the state with both private
//! information vectors. Given the common information `C_t`, the belief on
//! `S_t` is Gaussian with mean `M_t` and covariance `Σ_t`, and it updates
//! through the common-information increment `Z_{t+1}`:
//!
//! ```text
//! M_{t+1} = F1_M M_t + F1_Z Z_{t+1}            Σ_{t+1} = f(Σ_t)
//! ```
//!
//! Both maps are built by Gaussian conditioning of the stacked one-step
//! system on `Z_{t+1}`, instantiated at constant actions: when beliefs are
//! strategy-independent, any affine action choice produces the same
//! conditional covariance, and action terms re-enter the mean map through the
//! shared-action components of `Z_{t+1}`. Whether the game actually has
//! strategy-independent beliefs is decided by [`check_strategy_independence`],
//! which compares the recursion against exact conditional laws computed under
//! random affine strategy profiles.

use serde::Serialize;

use crate::info::{ComponentKind, InfoMaps};
use crate::linalg::{
    block_diag, clip_psd, gaussian_condition, pinv, symmetrize, vstack, LinalgError, Matrix,
    Vector, PSD_CLIP_TOLERANCE,
};
use crate::model::GameSpec;
use crate::trajectory::{build_signals, AffineSignal, StrategyProfile};

/// Maximum deviation under which beliefs count as strategy-independent.
pub const INDEPENDENCE_TOLERANCE: f64 = 1e-8;

/// One transition of the belief recursion, from stage `t` to `t+1`.
#[derive(Debug, Clone)]
pub struct BeliefStage {
    /// Coefficient of `M_t` in the mean update.
    pub f_m: Matrix,
    /// Coefficient of `Z_{t+1}` in the mean update.
    pub f_z: Matrix,
    /// Constant term of the mean update; zero because all primitives are
    /// zero-mean.
    pub f_0: Vector,
    /// `Σ_{t+1}`: covariance of `S_{t+1}` given `C_{t+1}`.
    pub sigma_next: Matrix,
    /// Innovation covariance of `Z_{t+1}` given `C_t` (at constant actions,
    /// so shared-action components are deterministic and contribute zero).
    pub z_cov: Matrix,
    /// `Z_{t+1}` decomposed over its sources:
    /// `Z = z_from_state S_t + Σ_i z_from_action[i] U^i + z_from_noise w`
    /// where `w = (W0_t, V1_{t+1}, V2_{t+1})` has covariance `noise_cov`.
    pub z_from_state: Matrix,
    pub z_from_action: [Matrix; 2],
    pub z_from_noise: Matrix,
    pub noise_cov: Matrix,
    /// Norm of the mean-map coefficient on actions that are *not* part of
    /// `Z_{t+1}`. Nonzero means the conditional mean depends on a
    /// non-common action, i.e. beliefs cannot be strategy-independent.
    pub unshared_action_residual: f64,
}

/// The full belief recursion for a game.
#[derive(Debug, Clone)]
pub struct BeliefChain {
    /// `Σ_t` for `t = 1..T`.
    pub sigma: Vec<Matrix>,
    /// Transitions for `t = 1..T-1`.
    pub stages: Vec<BeliefStage>,
    /// `M_1 = init_gain * c_1` (primitives are zero-mean, so no offset).
    pub init_gain: Matrix,
    /// Covariance of `C_1`.
    pub cov_c1: Matrix,
    /// `mean_chain[t-1]` maps the realized common history `c_t` to `M_t`.
    pub mean_chain: Vec<Matrix>,
}

impl BeliefChain {
    /// Covariance of `M_t` (over the randomness of the common history).
    pub fn mean_cov(&self, spec: &GameSpec, maps: &InfoMaps, t: usize) -> Matrix {
        // Var(M_t) = Var(S_t) - Σ_t, and Var(S_t) is available from the
        // zero-profile closed loop; using the chain directly is cheaper:
        // M_t = W_t c_t, so Var(M_t) = W_t Cov(c_t) W_t^T. Cov(c_t) is only
        // stored for t = 1; for later stages go through the signal table.
        let profile = StrategyProfile::zeros(spec, maps);
        let table = build_signals(spec, maps, &profile);
        let c = &table.common[t - 1];
        let w = &self.mean_chain[t - 1];
        w * c.covariance(&table.omega_cov) * w.transpose()
    }
}

/// Builds the belief recursion. Fails only on numerical PSD violations,
/// which indicate an inconsistent spec rather than roundoff.
pub fn propagate_belief(spec: &GameSpec, maps: &InfoMaps) -> Result<BeliefChain, LinalgError> {
    let t_max = spec.horizon;

    // Stage 1: condition S_1 on C_1 directly. No actions exist yet, so the
    // zero-profile closed loop gives the exact joint law.
    let profile = StrategyProfile::zeros(spec, maps);
    let table = build_signals(spec, maps, &profile);
    let s1 = table.stacked_state(1);
    let c1 = &table.common[0];
    let init = gaussian_condition(
        s1.mean(),
        c1.mean(),
        &s1.covariance(&table.omega_cov),
        &s1.cross_covariance(c1, &table.omega_cov),
        &c1.covariance(&table.omega_cov),
    )?;

    let mut sigma = vec![init.cov];
    let mut mean_chain = vec![init.gain.clone()];
    let mut stages = Vec::new();
    for t in 1..t_max {
        let stage = transition(spec, maps, &sigma[t - 1], t)?;
        let w_next = &stage.f_m * &mean_chain[t - 1] * &maps.common_in_next[t - 1]
            + &stage.f_z * &maps.increment_in_next[t - 1];
        mean_chain.push(w_next);
        sigma.push(stage.sigma_next.clone());
        stages.push(stage);
    }

    Ok(BeliefChain {
        sigma,
        stages,
        init_gain: init.gain,
        cov_c1: c1.covariance(&table.omega_cov),
        mean_chain,
    })
}

/// One conditioning step: stack `(S_{t+1}, Z_{t+1})` as affine maps of the
/// source `(S_t, U1_t, U2_t, W0_t, V1_{t+1}, V2_{t+1})`, condition on
/// `Z_{t+1}` at constant actions, and reconstruct the action coefficients
/// through the shared components of `Z_{t+1}`.
fn transition(
    spec: &GameSpec,
    maps: &InfoMaps,
    sigma_t: &Matrix,
    t: usize,
) -> Result<BeliefStage, LinalgError> {
    let n_x = spec.n_x(t);
    let n_x_next = spec.n_x(t + 1);
    let n_u = [spec.n_u(1, t), spec.n_u(2, t)];
    let n_y_next = [spec.n_y(1, t + 1), spec.n_y(2, t + 1)];
    let s_dim = maps.s_dim(t);
    let s_next_dim = maps.s_dim(t + 1);

    // Source layout: (S_t | U1 | U2 | W0 | V1 | V2).
    let blocks = [s_dim, n_u[0], n_u[1], n_x_next, n_y_next[0], n_y_next[1]];
    let mut offsets = [0usize; 6];
    for k in 1..6 {
        offsets[k] = offsets[k - 1] + blocks[k - 1];
    }
    let v_dim = offsets[5] + blocks[5];
    let sel = |k: usize| -> Matrix {
        let mut m = Matrix::zeros(blocks[k], v_dim);
        for r in 0..blocks[k] {
            m[(r, offsets[k] + r)] = 1.0;
        }
        m
    };

    let s_t = sel(0);
    let x_t = s_t.rows(0, n_x).into_owned();
    let p_t = [
        s_t.rows(maps.private_offset(1, t), maps.p_dim(1, t)).into_owned(),
        s_t.rows(maps.private_offset(2, t), maps.p_dim(2, t)).into_owned(),
    ];
    let u = [sel(1), sel(2)];
    let d = &spec.dynamics[t - 1];
    let x_next = &d.a * &x_t + &d.b1 * &u[0] + &d.b2 * &u[1] + sel(3);
    let y_next = [
        &spec.observations[0][t].h * &x_next + sel(4),
        &spec.observations[1][t].h * &x_next + sel(5),
    ];

    let p_next = [0, 1].map(|i| {
        &maps.xi[i][t - 1] * vstack(&[p_t[i].clone(), u[i].clone(), y_next[i].clone()])
    });
    let a_s = vstack(&[x_next, p_next[0].clone(), p_next[1].clone()]);
    let a_z = &maps.zeta[t - 1]
        * vstack(&[
            p_t[0].clone(),
            p_t[1].clone(),
            u[0].clone(),
            u[1].clone(),
            y_next[0].clone(),
            y_next[1].clone(),
        ]);

    // Covariance of the source given C_t at constant actions.
    let cov_v = block_diag(&[
        sigma_t.clone(),
        Matrix::zeros(n_u[0], n_u[0]),
        Matrix::zeros(n_u[1], n_u[1]),
        d.noise_cov.clone(),
        spec.observations[0][t].noise_cov.clone(),
        spec.observations[1][t].noise_cov.clone(),
    ]);

    let cov_ss = &a_s * &cov_v * a_s.transpose();
    let cov_sz = &a_s * &cov_v * a_z.transpose();
    let cov_zz = &a_z * &cov_v * a_z.transpose();
    let k = &cov_sz * pinv(&cov_zz);
    let sigma_next = clip_psd(
        &(&cov_ss - &k * cov_sz.transpose()),
        PSD_CLIP_TOLERANCE * (1.0 + cov_ss.norm()),
    )?;

    // Mean map: split the source columns of (a_s - K a_z) into the M_t block
    // and per-action blocks, folding shared actions back into F1_Z.
    let coeff = &a_s - &k * &a_z;
    let f_m = coeff.columns(0, s_dim).into_owned();
    let mut f_z = k;
    let mut unshared_action_residual: f64 = 0.0;
    for i in [1u8, 2] {
        let cols = coeff
            .columns(offsets[i as usize], n_u[i as usize - 1])
            .into_owned();
        match maps.increments[t - 1].locate(ComponentKind::Action, i, t) {
            Some((z_off, z_dim)) => {
                debug_assert_eq!(z_dim, n_u[i as usize - 1]);
                let mut view = f_z.view_mut((0, z_off), (s_next_dim, z_dim));
                view += cols;
            }
            None => unshared_action_residual = unshared_action_residual.max(cols.norm()),
        }
    }

    let noise_dim = n_x_next + n_y_next[0] + n_y_next[1];
    Ok(BeliefStage {
        f_m,
        f_z,
        f_0: Vector::zeros(s_next_dim),
        sigma_next,
        z_cov: cov_zz,
        z_from_state: a_z.columns(0, s_dim).into_owned(),
        z_from_action: [
            a_z.columns(offsets[1], n_u[0]).into_owned(),
            a_z.columns(offsets[2], n_u[1]).into_owned(),
        ],
        z_from_noise: a_z.columns(offsets[3], noise_dim).into_owned(),
        noise_cov: block_diag(&[
            d.noise_cov.clone(),
            spec.observations[0][t].noise_cov.clone(),
            spec.observations[1][t].noise_cov.clone(),
        ]),
        unshared_action_residual,
    })
}

// ---- strategy independence -----------------------------------------------------

/// Outcome of the randomized strategy-independence check.
#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub trials: usize,
    pub seed: u64,
    /// Max over trials and stages of the covariance discrepancy.
    pub max_sigma_deviation: f64,
    /// Max over trials and stages of the root-mean-square gap between the
    /// recursion's conditional mean and the exact conditional mean, both
    /// evaluated on the realized common history.
    pub max_mean_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// splitmix64 mixing of a seed and a counter, the crate-wide recipe for
/// independent deterministic substreams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Conditional law of a Gaussian pair with a rank-truncated inverse on the
/// conditioning covariance. Components of the common history that are affine
/// in earlier components (actions under a fixed profile) make the Gram matrix
/// exactly singular; after long products of stage maps the zero eigenvalues
/// reappear as roundoff-scale values that a machine-epsilon pseudoinverse
/// cutoff would happily invert. Truncating relative to the largest eigenvalue
/// restores the deterministic directions.
fn truncated_condition(cov_ss: &Matrix, cov_sc: &Matrix, cov_cc: &Matrix) -> (Matrix, Matrix) {
    let n_c = cov_cc.nrows();
    if n_c == 0 {
        return (Matrix::zeros(cov_ss.nrows(), 0), cov_ss.clone());
    }
    let eig = symmetrize(cov_cc).symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let threshold = lam_max * 1e-12;
    let mut inv = Matrix::zeros(n_c, n_c);
    for k in 0..n_c {
        if eig.eigenvalues[k] > threshold {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / eig.eigenvalues[k];
        }
    }
    let gain = cov_sc * inv;
    let cov = symmetrize(&(cov_ss - &gain * cov_sc.transpose()));
    (gain, cov)
}

/// Tests whether the belief recursion is valid for *every* affine strategy
/// profile by drawing random profiles and comparing, in closed form, the
/// exact conditional law of `S_t` given `C_t` against the recursion's
/// prediction. No sampling of trajectories is involved: each comparison is
/// exact Gaussian algebra, randomness only picks the profiles.
pub fn check_strategy_independence(
    spec: &GameSpec,
    maps: &InfoMaps,
    chain: &BeliefChain,
    trials: usize,
    seed: u64,
) -> IndependenceReport {
    use rand::SeedableRng;

    let mut max_sigma_deviation: f64 = 0.0;
    let mut max_mean_deviation: f64 = 0.0;

    for trial in 0..trials {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, trial as u64));
        let profile = StrategyProfile::random(spec, maps, &mut rng);
        let table = build_signals(spec, maps, &profile);

        for t in 1..=spec.horizon {
            let s = table.stacked_state(t);
            let c = &table.common[t - 1];
            let (gain, cov) = truncated_condition(
                &s.covariance(&table.omega_cov),
                &s.cross_covariance(c, &table.omega_cov),
                &c.covariance(&table.omega_cov),
            );
            let offset = s.mean() - &(&gain * c.mean());
            max_sigma_deviation = max_sigma_deviation.max((&cov - &chain.sigma[t - 1]).norm());

            // Both maps applied to the *realized* common history, compared in
            // mean square. This dodges the gain ambiguity that degenerate
            // C_t covariances introduce: the conditional mean is unique as a
            // random variable even when its coefficients are not.
            let exact = c.map(&gain).shift(&offset);
            let predicted = c.map(&chain.mean_chain[t - 1]);
            let diff = AffineSignal {
                matrix: &exact.matrix - &predicted.matrix,
                offset: &exact.offset - &predicted.offset,
            };
            let mean_square = (diff.covariance(&table.omega_cov)).trace()
                + diff.offset.norm_squared();
            max_mean_deviation = max_mean_deviation.max(mean_square.max(0.0).sqrt());
        }
    }

    let passed = max_sigma_deviation <= INDEPENDENCE_TOLERANCE
        && max_mean_deviation <= INDEPENDENCE_TOLERANCE;
    IndependenceReport {
        trials,
        seed,
        max_sigma_deviation,
        max_mean_deviation,
        tolerance: INDEPENDENCE_TOLERANCE,
        passed,
    }
}
