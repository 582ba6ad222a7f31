//! Static auxiliary Bayesian game between two controllers.
//!
//! The data is a one-shot game with a hidden Gaussian vector `X` (mean `m`,
//! covariance `Σ_xx`), observations `Y^i = H^i X`, and quadratic costs over
//! `v = (X, U^1, U^2)`:
//!
//! ```text
//! cost^i(v; m) = v' Q^i v + 2 lin^i' v + 2 m' coup^i v
//!              + m' quad_mean^i m + lin_mean^i m + constant^i
//! ```
//!
//! with `Q^1 = C`, `Q^2 = E`. A Nash equilibrium in affine strategies
//! `U^i = T^i (Y^i - H^i m) + b^i` satisfies the coupled first-order
//! conditions
//!
//! ```text
//! C22 T1 + C12' Σ_xy1 R1 + C23 T2 Σ_y2y1 R1 = 0
//! E33 T2 + E13' Σ_xy2 R2 + E23' T1 Σ_y1y2 R2 = 0        (R_i = Σ_yiyi^+)
//! ```
//!
//! Substituting the second into the first yields the Stein equation
//! `T1 - K1 T1 Q = P3` with `K1 = C22^-1 C23 E33^-1 E23'` and
//! `Q = Σ_y1y2 R2 Σ_y2y1 R1`; the intercepts solve a block-linear system and
//! split as `b^i = l^i + L^i m` with both parts independent of `m`. The
//! equilibrium is unique when `ρ(K1) < 1` (contraction of the best-response
//! composition) or, failing that, when the vectorized gain system and the
//! intercept system are both nonsingular.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{
    hstack, min_symmetric_eigenvalue, pinv, solve_stein, spectral_radius, symmetrize, vstack,
    LinalgError, Matrix, Vector,
};

/// Assumption margin below which the contraction condition counts as failed.
pub const CONTRACTION_MARGIN: f64 = 1e-9;
/// Relative singularity threshold for the fallback uniqueness systems.
pub const SINGULARITY_TOLERANCE: f64 = 1e-9;
/// `ρ(K1) λ(Q)` this close to 1 from below triggers a conditioning warning.
pub const CONDITIONING_BAND: f64 = 1e-6;

// ---- data ------------------------------------------------------------------

/// One static game instance. Fields are public; call [`StageGameData::validate`]
/// after hand-assembly.
#[derive(Debug, Clone)]
pub struct StageGameData {
    /// Controller 1's quadratic block over `v = (X, U1, U2)`.
    pub c: Matrix,
    /// Controller 2's quadratic block over `v`.
    pub e: Matrix,
    /// Linear terms: `cost^i += 2 lin[i]' v`.
    pub lin: [Vector; 2],
    /// Mean coupling: `cost^i += 2 m' coup[i] v`.
    pub coup: [Matrix; 2],
    /// Pure mean terms: `cost^i += m' quad_mean[i] m + lin_mean[i] m + constant[i]`.
    pub quad_mean: [Matrix; 2],
    pub lin_mean: [Matrix; 2],
    pub constant: [f64; 2],
    /// Joint covariance of `(X, Y1, Y2)` about its mean.
    pub sigma: Matrix,
    /// Observation maps: `Y^i = H^i X` exactly.
    pub h: [Matrix; 2],
    /// Mean of `X`. The solution is parametric in the mean; this value only
    /// anchors instantiated quantities such as best responses.
    pub mean: Vector,
    pub n_x: usize,
    pub n_u: [usize; 2],
    pub n_y: [usize; 2],
}

/// Affine decision rule on a controller's raw observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRule {
    pub gain: Matrix,
    pub offset: Vector,
}

impl AffineRule {
    pub fn zeros(n_u: usize, n_y: usize) -> Self {
        AffineRule { gain: Matrix::zeros(n_u, n_y), offset: Vector::zeros(n_u) }
    }

    pub fn apply(&self, y: &Vector) -> Vector {
        &self.gain * y + &self.offset
    }

    pub fn distance(&self, other: &AffineRule) -> f64 {
        (&self.gain - &other.gain).norm() + (&self.offset - &other.offset).norm()
    }
}

/// Equilibrium of the static game, parametric in the mean `m`.
#[derive(Debug, Clone)]
pub struct StageSolution {
    /// Gains on the centered observations `Y^i - H^i m`.
    pub obs_gain: [Matrix; 2],
    /// Constant intercept parts: `b^i = intercept[i] + mean_gain[i] m`.
    pub intercept: [Vector; 2],
    pub mean_gain: [Matrix; 2],
    /// Expected equilibrium cost of controller i: `m' phi m + xi m + upsilon`.
    pub phi: [Matrix; 2],
    pub xi: [Matrix; 2],
    pub upsilon: [f64; 2],
    /// Max first-order-condition residual over both controllers.
    pub foc_residual: f64,
    /// `Some(1 - ρ(K1) λ(Q))` when the product sits in the warning band.
    pub conditioning_warning: Option<f64>,
}

impl StageSolution {
    /// The rule actually played on raw observations at the given mean.
    pub fn realized_rule(&self, i: usize, data: &StageGameData) -> AffineRule {
        let centered = &self.obs_gain[i] * &data.h[i] * &data.mean;
        AffineRule {
            gain: self.obs_gain[i].clone(),
            offset: &self.intercept[i] + &self.mean_gain[i] * &data.mean - centered,
        }
    }

    /// Evaluates `m' phi m + xi m + upsilon` for controller i.
    pub fn expected_cost(&self, i: usize, m: &Vector) -> f64 {
        (m.transpose() * &self.phi[i] * m)[(0, 0)] + (&self.xi[i] * m)[(0, 0)] + self.upsilon[i]
    }
}

/// Uniqueness diagnostics for the coupled first-order conditions.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    /// Spectral radius of `K1 = C22^-1 C23 E33^-1 E23'`.
    pub rho_k1: f64,
    /// Spectral radius of `K2 = E33^-1 E23' C22^-1 C23`.
    pub rho_k2: f64,
    /// Largest eigenvalue modulus of `Q`; always at most 1 for consistent data.
    pub rho_q: f64,
    /// Contraction path: `ρ(K1) < 1 - 1e-9`.
    pub contraction: bool,
    /// Smallest singular value of `I - K1` (or `I - K2`, whichever larger).
    pub intercept_decoupling_min_singular: f64,
    /// Smallest singular value of the block intercept system.
    pub intercept_system_min_singular: f64,
    /// Smallest singular value of the vectorized gain system `I - Q' ⊗ K1`.
    pub gain_system_min_singular: f64,
    /// Fallback path: both linear systems nonsingular.
    pub unique_linear_systems: bool,
    /// `ρ(K1) λ(Q)` within `[1 - 1e-6, 1)`.
    pub conditioning_warning: bool,
}

impl ConditionReport {
    /// Either uniqueness path suffices to solve the game.
    pub fn solvable(&self) -> bool {
        self.contraction || self.unique_linear_systems
    }
}

#[derive(Debug, Error)]
pub enum StageGameError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("inconsistent stage-game data: {context}")]
    Shape { context: String },
    #[error("controller {controller} action cost block not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { controller: u8, min_eigenvalue: f64 },
    #[error("no unique equilibrium: rho(K1) = {rho_k1:.6}, gain system min singular value {gain_system_min_singular:.3e}, intercept system min singular value {intercept_system_min_singular:.3e}")]
    NoUniqueSolution {
        rho_k1: f64,
        gain_system_min_singular: f64,
        intercept_system_min_singular: f64,
    },
}

// ---- construction ------------------------------------------------------------

/// Joint covariance of `(X, Y1, Y2)` induced by `Y^i = H^i X`.
pub fn joint_covariance(sigma_xx: &Matrix, h1: &Matrix, h2: &Matrix) -> Matrix {
    let top = hstack(&[
        sigma_xx.clone(),
        sigma_xx * h1.transpose(),
        sigma_xx * h2.transpose(),
    ]);
    let mid = hstack(&[
        h1 * sigma_xx,
        h1 * sigma_xx * h1.transpose(),
        h1 * sigma_xx * h2.transpose(),
    ]);
    let bot = hstack(&[
        h2 * sigma_xx,
        h2 * sigma_xx * h1.transpose(),
        h2 * sigma_xx * h2.transpose(),
    ]);
    symmetrize(&vstack(&[top, mid, bot]))
}

impl StageGameData {
    /// A game without mean-coupled or constant cost terms.
    pub fn decoupled_mean(
        c: Matrix,
        e: Matrix,
        lin: [Vector; 2],
        h1: Matrix,
        h2: Matrix,
        sigma_xx: Matrix,
        mean: Vector,
    ) -> Result<Self, StageGameError> {
        let n_x = sigma_xx.nrows();
        let n_y = [h1.nrows(), h2.nrows()];
        let v_dim = c.nrows();
        if v_dim < n_x {
            return Err(StageGameError::Shape {
                context: format!("cost dimension {v_dim} smaller than state dimension {n_x}"),
            });
        }
        let n_u_total = v_dim - n_x;
        // Infer the action split from the linear terms when possible; callers
        // assembling asymmetric splits should fill the struct directly.
        if n_u_total % 2 != 0 {
            return Err(StageGameError::Shape {
                context: "cannot infer an even action split; construct fields directly".into(),
            });
        }
        let n_u = [n_u_total / 2, n_u_total / 2];
        let data = StageGameData {
            sigma: joint_covariance(&sigma_xx, &h1, &h2),
            c,
            e,
            lin,
            coup: [Matrix::zeros(n_x, v_dim), Matrix::zeros(n_x, v_dim)],
            quad_mean: [Matrix::zeros(n_x, n_x), Matrix::zeros(n_x, n_x)],
            lin_mean: [Matrix::zeros(1, n_x), Matrix::zeros(1, n_x)],
            constant: [0.0, 0.0],
            h: [h1, h2],
            mean,
            n_x,
            n_u,
            n_y,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn v_dim(&self) -> usize {
        self.n_x + self.n_u[0] + self.n_u[1]
    }

    pub fn validate(&self) -> Result<(), StageGameError> {
        let v = self.v_dim();
        let shape = |ok: bool, context: &str| -> Result<(), StageGameError> {
            if ok {
                Ok(())
            } else {
                Err(StageGameError::Shape { context: context.to_string() })
            }
        };
        shape(self.c.shape() == (v, v), "controller 1 quadratic block shape")?;
        shape(self.e.shape() == (v, v), "controller 2 quadratic block shape")?;
        let y_total = self.n_x + self.n_y[0] + self.n_y[1];
        shape(self.sigma.shape() == (y_total, y_total), "joint covariance shape")?;
        shape(self.mean.len() == self.n_x, "mean dimension")?;
        for i in 0..2 {
            shape(self.h[i].shape() == (self.n_y[i], self.n_x), "observation map shape")?;
            shape(self.lin[i].len() == v, "linear term dimension")?;
            shape(self.coup[i].shape() == (self.n_x, v), "mean-coupling shape")?;
            shape(self.quad_mean[i].shape() == (self.n_x, self.n_x), "mean quadratic shape")?;
            shape(self.lin_mean[i].shape() == (1, self.n_x), "mean linear shape")?;
        }

        let scale = 1.0 + self.sigma.norm();
        for (i, quad) in [&self.c, &self.e].into_iter().enumerate() {
            if (quad - quad.transpose()).norm() > 1e-9 * (1.0 + quad.norm()) {
                return Err(StageGameError::Shape {
                    context: format!("controller {} quadratic block not symmetric", i + 1),
                });
            }
            if min_symmetric_eigenvalue(quad) < -1e-9 * (1.0 + quad.norm()) {
                return Err(StageGameError::Shape {
                    context: format!("controller {} quadratic block not positive semidefinite", i + 1),
                });
            }
            let own = self.own_action_block(i);
            let min = min_symmetric_eigenvalue(&own);
            if self.n_u[i] > 0 && min <= 0.0 {
                return Err(StageGameError::NotPositiveDefinite {
                    controller: i as u8 + 1,
                    min_eigenvalue: min,
                });
            }
        }
        // Cross blocks of the joint covariance must agree with the maps.
        let blocks = SigmaBlocks::new(self);
        for i in 0..2 {
            let expected = &blocks.xx * self.h[i].transpose();
            if (blocks.x_y(i) - expected).norm() > 1e-8 * scale {
                return Err(StageGameError::Shape {
                    context: format!("covariance inconsistent with observation map {}", i + 1),
                });
            }
        }
        Ok(())
    }

    /// Own-action quadratic block: `C22` for controller 1, `E33` for 2.
    fn own_action_block(&self, i: usize) -> Matrix {
        let quad = if i == 0 { &self.c } else { &self.e };
        let off = self.n_x + if i == 0 { 0 } else { self.n_u[0] };
        quad.view((off, off), (self.n_u[i], self.n_u[i])).into_owned()
    }

    /// Instantiated linear row over `v`: `lin[i]' + m' coup[i]`.
    pub fn linear_row(&self, i: usize, m: &Vector) -> Matrix {
        let col = &self.lin[i] + self.coup[i].transpose() * m;
        Matrix::from_row_slice(1, col.len(), col.as_slice())
    }

    /// Instantiated scalar cost term at the mean.
    pub fn scalar_term(&self, i: usize, m: &Vector) -> f64 {
        (m.transpose() * &self.quad_mean[i] * m)[(0, 0)]
            + (&self.lin_mean[i] * m)[(0, 0)]
            + self.constant[i]
    }
}

/// Named views into the cost and covariance blocks.
struct SigmaBlocks<'a> {
    xx: Matrix,
    data: &'a StageGameData,
}

impl<'a> SigmaBlocks<'a> {
    fn new(data: &'a StageGameData) -> Self {
        SigmaBlocks { xx: data.sigma.view((0, 0), (data.n_x, data.n_x)).into_owned(), data }
    }

    fn y_offset(&self, i: usize) -> usize {
        self.data.n_x + if i == 0 { 0 } else { self.data.n_y[0] }
    }

    fn x_y(&self, i: usize) -> Matrix {
        self.data
            .sigma
            .view((0, self.y_offset(i)), (self.data.n_x, self.data.n_y[i]))
            .into_owned()
    }

    fn y_y(&self, i: usize, j: usize) -> Matrix {
        self.data
            .sigma
            .view((self.y_offset(i), self.y_offset(j)), (self.data.n_y[i], self.data.n_y[j]))
            .into_owned()
    }
}

struct CostBlocks<'a> {
    quad: &'a Matrix,
    n_x: usize,
    n_u: [usize; 2],
}

impl<'a> CostBlocks<'a> {
    fn u_offset(&self, i: usize) -> usize {
        self.n_x + if i == 0 { 0 } else { self.n_u[0] }
    }

    /// Cross block between the state and controller i's action.
    fn x_u(&self, i: usize) -> Matrix {
        self.quad.view((0, self.u_offset(i)), (self.n_x, self.n_u[i])).into_owned()
    }

    fn u_u(&self, i: usize, j: usize) -> Matrix {
        self.quad
            .view((self.u_offset(i), self.u_offset(j)), (self.n_u[i], self.n_u[j]))
            .into_owned()
    }
}

fn inverse_spd(m: &Matrix, controller: u8) -> Result<Matrix, StageGameError> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    symmetrize(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(StageGameError::NotPositiveDefinite {
            controller,
            min_eigenvalue: min_symmetric_eigenvalue(m),
        })
}

/// The recurring operator pieces shared by the report and the solver.
struct Couplings {
    c22_inv: Matrix,
    e33_inv: Matrix,
    /// `C22^-1 C23` and `E33^-1 E23'`: the scaled action couplings.
    c_coupling: Matrix,
    e_coupling: Matrix,
    k1: Matrix,
    k2: Matrix,
    q: Matrix,
    p3: Matrix,
    r: [Matrix; 2],
}

fn couplings(data: &StageGameData) -> Result<Couplings, StageGameError> {
    let c = CostBlocks { quad: &data.c, n_x: data.n_x, n_u: data.n_u };
    let e = CostBlocks { quad: &data.e, n_x: data.n_x, n_u: data.n_u };
    let sigma = SigmaBlocks::new(data);

    let c22_inv = inverse_spd(&c.u_u(0, 0), 1)?;
    let e33_inv = inverse_spd(&e.u_u(1, 1), 2)?;
    let c_coupling = &c22_inv * c.u_u(0, 1);
    let e_coupling = &e33_inv * e.u_u(0, 1).transpose();
    let k1 = &c_coupling * &e_coupling;
    let k2 = &e_coupling * &c_coupling;

    let r = [pinv(&sigma.y_y(0, 0)), pinv(&sigma.y_y(1, 1))];
    let q = sigma.y_y(0, 1) * &r[1] * sigma.y_y(1, 0) * &r[0];
    let p3 = -&c22_inv * c.x_u(0).transpose() * sigma.x_y(0) * &r[0]
        + &c_coupling * &e33_inv * e.x_u(1).transpose() * sigma.x_y(1) * &r[1]
            * sigma.y_y(1, 0)
            * &r[0];

    Ok(Couplings { c22_inv, e33_inv, c_coupling, e_coupling, k1, k2, q, p3, r })
}

// ---- operations ------------------------------------------------------------

/// Computes both uniqueness paths without solving the game.
pub fn check_existence_conditions(data: &StageGameData) -> Result<ConditionReport, StageGameError> {
    let ops = couplings(data)?;
    Ok(report_from(&ops)?)
}

fn report_from(ops: &Couplings) -> Result<ConditionReport, LinalgError> {
    let rho_k1 = spectral_radius(&ops.k1)?;
    let rho_k2 = spectral_radius(&ops.k2)?;
    let rho_q = spectral_radius(&ops.q)?;

    let eye = |n: usize| Matrix::identity(n, n);
    let min_sv = |m: &Matrix| -> f64 {
        if m.is_empty() {
            f64::INFINITY
        } else {
            crate::linalg::min_singular_value(m)
        }
    };
    let decouple1 = eye(ops.k1.nrows()) - &ops.k1;
    let decouple2 = eye(ops.k2.nrows()) - &ops.k2;
    let intercept_decoupling_min_singular = min_sv(&decouple1).max(min_sv(&decouple2));

    let n_u1 = ops.k1.nrows();
    let n_u2 = ops.k2.nrows();
    let intercept_system = vstack(&[
        hstack(&[eye(n_u1), ops.c_coupling.clone()]),
        hstack(&[ops.e_coupling.clone(), eye(n_u2)]),
    ]);
    let intercept_system_min_singular = min_sv(&intercept_system);

    let gain_dim = ops.k1.nrows() * ops.q.ncols();
    let gain_system = Matrix::identity(gain_dim, gain_dim) - ops.q.transpose().kronecker(&ops.k1);
    let gain_system_min_singular = min_sv(&gain_system);

    let singular_bound = |m: f64, reference: &Matrix| m <= SINGULARITY_TOLERANCE * (1.0 + reference.norm());
    let unique_linear_systems = !singular_bound(intercept_decoupling_min_singular, &ops.k1)
        && !singular_bound(intercept_system_min_singular, &intercept_system)
        && !singular_bound(gain_system_min_singular, &gain_system);

    let product = rho_k1 * rho_q;
    Ok(ConditionReport {
        rho_k1,
        rho_k2,
        rho_q,
        contraction: rho_k1 < 1.0 - CONTRACTION_MARGIN,
        intercept_decoupling_min_singular,
        intercept_system_min_singular,
        gain_system_min_singular,
        unique_linear_systems,
        conditioning_warning: (1.0 - CONDITIONING_BAND..1.0).contains(&product),
    })
}

/// Solves the static game, parametric in the mean.
pub fn solve_stage_game(data: &StageGameData) -> Result<StageSolution, StageGameError> {
    data.validate()?;
    let ops = couplings(data)?;
    let report = report_from(&ops)?;
    if !report.solvable() {
        return Err(StageGameError::NoUniqueSolution {
            rho_k1: report.rho_k1,
            gain_system_min_singular: report.gain_system_min_singular,
            intercept_system_min_singular: report.intercept_system_min_singular,
        });
    }
    let conditioning_warning = if report.conditioning_warning {
        let margin = 1.0 - report.rho_k1 * report.rho_q;
        log::warn!("gain system near-singular: 1 - rho(K1) lambda(Q) = {margin:.3e}");
        Some(margin)
    } else {
        None
    };

    let c = CostBlocks { quad: &data.c, n_x: data.n_x, n_u: data.n_u };
    let e = CostBlocks { quad: &data.e, n_x: data.n_x, n_u: data.n_u };
    let sigma = SigmaBlocks::new(data);

    // Gains: Stein solve for T1, back-substitution for T2.
    let t1 = solve_stein(&(-&ops.k1), &ops.q, &ops.p3)?;
    let t2 = -&ops.e33_inv * e.x_u(1).transpose() * sigma.x_y(1) * &ops.r[1]
        - &ops.e33_inv * e.u_u(0, 1).transpose() * &t1 * sigma.y_y(0, 1) * &ops.r[1];

    // Intercepts: the block system
    //   [ I            C22^-1 C23 ] [b1]   [ -C22^-1 (lin rows + (C12' + coup) m) ]
    //   [ E33^-1 E23'  I          ] [b2] = [ -E33^-1 (lin rows + (E13' + coup) m) ]
    // solved once for the constant and the mean-proportional right-hand sides.
    let n_u1 = data.n_u[0];
    let n_u2 = data.n_u[1];
    let n_b = n_u1 + n_u2;
    let (l, l_mean) = if n_b == 0 {
        (Vector::zeros(0), Matrix::zeros(0, data.n_x))
    } else {
        let mut system = Matrix::identity(n_b, n_b);
        system.view_mut((0, n_u1), (n_u1, n_u2)).copy_from(&ops.c_coupling);
        system.view_mut((n_u1, 0), (n_u2, n_u1)).copy_from(&ops.e_coupling);

        let lin_u = |i: usize| -> Vector {
            let quad = if i == 0 { &c } else { &e };
            data.lin[i].rows(quad.u_offset(i), data.n_u[i]).into_owned()
        };
        let coup_u = |i: usize| -> Matrix {
            let quad = if i == 0 { &c } else { &e };
            data.coup[i]
                .view((0, quad.u_offset(i)), (data.n_x, data.n_u[i]))
                .transpose()
        };
        let mut rhs = Matrix::zeros(n_b, 1 + data.n_x);
        let const1 = -&ops.c22_inv * lin_u(0);
        let const2 = -&ops.e33_inv * lin_u(1);
        rhs.view_mut((0, 0), (n_u1, 1)).copy_from(&const1);
        rhs.view_mut((n_u1, 0), (n_u2, 1)).copy_from(&const2);
        let mean1 = -&ops.c22_inv * (c.x_u(0).transpose() + coup_u(0));
        let mean2 = -&ops.e33_inv * (e.x_u(1).transpose() + coup_u(1));
        rhs.view_mut((0, 1), (n_u1, data.n_x)).copy_from(&mean1);
        rhs.view_mut((n_u1, 1), (n_u2, data.n_x)).copy_from(&mean2);
        let solved = system.clone().lu().solve(&rhs).ok_or_else(|| {
            StageGameError::NoUniqueSolution {
                rho_k1: report.rho_k1,
                gain_system_min_singular: report.gain_system_min_singular,
                intercept_system_min_singular: 0.0,
            }
        })?;
        let consts = solved.column(0).into_owned();
        let means = solved.columns(1, data.n_x).into_owned();
        (consts, means)
    };

    let obs_gain = [t1, t2];
    let intercept = [l.rows(0, n_u1).into_owned(), l.rows(n_u1, n_u2).into_owned()];
    let mean_gain = [
        l_mean.rows(0, n_u1).into_owned(),
        l_mean.rows(n_u1, n_u2).into_owned(),
    ];

    let foc_residual = foc_residual(data, &ops, &obs_gain, &intercept, &mean_gain);
    let (phi, xi, upsilon) = assemble_values(data, &obs_gain, &intercept, &mean_gain);

    Ok(StageSolution {
        obs_gain,
        intercept,
        mean_gain,
        phi,
        xi,
        upsilon,
        foc_residual,
        conditioning_warning,
    })
}

/// Residuals of the coupled first-order conditions at the candidate solution,
/// gains and intercepts both, the latter probed at a generic mean.
fn foc_residual(
    data: &StageGameData,
    ops: &Couplings,
    t: &[Matrix; 2],
    l: &[Vector; 2],
    l_m: &[Matrix; 2],
) -> f64 {
    let c = CostBlocks { quad: &data.c, n_x: data.n_x, n_u: data.n_u };
    let e = CostBlocks { quad: &data.e, n_x: data.n_x, n_u: data.n_u };
    let sigma = SigmaBlocks::new(data);

    let gain1 = c.u_u(0, 0) * &t[0]
        + c.x_u(0).transpose() * sigma.x_y(0) * &ops.r[0]
        + c.u_u(0, 1) * &t[1] * sigma.y_y(1, 0) * &ops.r[0];
    let gain2 = e.u_u(1, 1) * &t[1]
        + e.x_u(1).transpose() * sigma.x_y(1) * &ops.r[1]
        + e.u_u(0, 1).transpose() * &t[0] * sigma.y_y(0, 1) * &ops.r[1];

    let probe = Vector::from_fn(data.n_x, |r, _| 0.3 + 0.1 * r as f64);
    let b = [0, 1].map(|i| &l[i] + &l_m[i] * &probe);
    let coup_u = |i: usize, quad: &CostBlocks| -> Matrix {
        data.coup[i]
            .view((0, quad.u_offset(i)), (data.n_x, data.n_u[i]))
            .transpose()
    };
    let lin_u = |i: usize, quad: &CostBlocks| -> Vector {
        data.lin[i].rows(quad.u_offset(i), data.n_u[i]).into_owned()
    };
    let int1 = c.u_u(0, 0) * &b[0]
        + c.x_u(0).transpose() * &probe
        + c.u_u(0, 1) * &b[1]
        + lin_u(0, &c)
        + coup_u(0, &c) * &probe;
    let int2 = e.u_u(1, 1) * &b[1]
        + e.x_u(1).transpose() * &probe
        + e.u_u(0, 1).transpose() * &b[0]
        + lin_u(1, &e)
        + coup_u(1, &e) * &probe;

    gain1.norm().max(gain2.norm()).max(int1.norm()).max(int2.norm())
}

/// Expected-cost coefficients at equilibrium: with `G = N + M_m`,
/// `N = [I; T1 H1; T2 H2]`, `M_m = [0; L1 - T1 H1; L2 - T2 H2]`,
/// `n0 = [0; l1; l2]`, the played joint vector is `v = N(X - m) + G m + n0`,
/// and each controller's cost averages to a quadratic in `m`.
fn assemble_values(
    data: &StageGameData,
    t: &[Matrix; 2],
    l: &[Vector; 2],
    l_m: &[Matrix; 2],
) -> ([Matrix; 2], [Matrix; 2], [f64; 2]) {
    let sigma = SigmaBlocks::new(data);
    let eye = Matrix::identity(data.n_x, data.n_x);
    let th = [&t[0] * &data.h[0], &t[1] * &data.h[1]];
    let n = vstack(&[eye.clone(), th[0].clone(), th[1].clone()]);
    let m_m = vstack(&[
        Matrix::zeros(data.n_x, data.n_x),
        &l_m[0] - &th[0],
        &l_m[1] - &th[1],
    ]);
    let g = &n + &m_m;
    let v_dim = data.v_dim();
    let mut n0 = Matrix::zeros(v_dim, 1);
    n0.view_mut((data.n_x, 0), (data.n_u[0], 1)).copy_from(&l[0]);
    n0.view_mut((data.n_x + data.n_u[0], 0), (data.n_u[1], 1)).copy_from(&l[1]);
    let fluct = &n * &sigma.xx * n.transpose();

    let mut phi = [Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
    let mut xi = [Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
    let mut upsilon = [0.0, 0.0];
    for i in 0..2 {
        let quad = if i == 0 { &data.c } else { &data.e };
        let lin_row = Matrix::from_row_slice(1, v_dim, data.lin[i].as_slice());
        let coup_g = &data.coup[i] * &g;
        phi[i] = symmetrize(&(g.transpose() * quad * &g + &data.quad_mean[i]))
            + &coup_g
            + coup_g.transpose();
        xi[i] = 2.0 * (n0.transpose() * quad * &g)
            + 2.0 * (&lin_row * &g)
            + 2.0 * (&data.coup[i] * &n0).transpose()
            + &data.lin_mean[i];
        upsilon[i] = (n0.transpose() * quad * &n0)[(0, 0)]
            + (quad * &fluct).trace()
            + 2.0 * (&lin_row * &n0)[(0, 0)]
            + data.constant[i];
    }
    (phi, xi, upsilon)
}

/// Exact affine best response of one controller to the opponent's affine rule,
/// at the instantiated mean.
pub fn best_response_map(
    data: &StageGameData,
    responder: u8,
    opponent_rule: &AffineRule,
) -> Result<AffineRule, StageGameError> {
    let i = responder as usize - 1;
    let j = 1 - i;
    if data.n_u[i] == 0 {
        return Ok(AffineRule::zeros(0, data.n_y[i]));
    }
    let c = CostBlocks {
        quad: if i == 0 { &data.c } else { &data.e },
        n_x: data.n_x,
        n_u: data.n_u,
    };
    let sigma = SigmaBlocks::new(data);
    let own_inv = inverse_spd(&c.u_u(i, i), responder)?;

    let mean_y = |k: usize| -> Vector { &data.h[k] * &data.mean };
    // E[X | Y^i] and E[Y^j | Y^i] as affine maps of the raw observation.
    let cond_x = crate::linalg::gaussian_condition(
        &data.mean,
        &mean_y(i),
        &sigma.xx,
        &sigma.x_y(i),
        &sigma.y_y(i, i),
    )?;
    let cond_yj = crate::linalg::gaussian_condition(
        &mean_y(j),
        &mean_y(i),
        &sigma.y_y(j, j),
        &sigma.y_y(j, i),
        &sigma.y_y(i, i),
    )?;

    // Expected opponent action given Y^i, as an affine map.
    let opp_gain = &opponent_rule.gain * &cond_yj.gain;
    let opp_offset = &opponent_rule.gain * &cond_yj.offset + &opponent_rule.offset;

    let cross = if i == 0 { c.u_u(0, 1) } else { c.u_u(0, 1).transpose() };
    let lin_u = data.lin[i].rows(c.u_offset(i), data.n_u[i]).into_owned();
    let coup_u = data.coup[i]
        .view((0, c.u_offset(i)), (data.n_x, data.n_u[i]))
        .transpose();

    let gain = -&own_inv * (c.x_u(i).transpose() * &cond_x.gain + &cross * &opp_gain);
    let offset = -&own_inv
        * (c.x_u(i).transpose() * &cond_x.offset
            + &cross * &opp_offset
            + lin_u
            + coup_u * &data.mean);
    Ok(AffineRule { gain, offset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    /// Second-stage lifted game of the bundled two-channel example, assembled
    /// by hand. X = (state, private observation), controller 1 has no action,
    /// controller 2 plays a scalar. Continuation quadratic has coefficient 1
    /// and constant 11/7; the mean transition is m' = [1, -4/7] m + [4/7, 1] (p, u).
    fn second_stage_data() -> StageGameData {
        let fm = [1.0, -4.0 / 7.0];
        let fz = [4.0 / 7.0, 1.0];
        // v = (x, p, u): continuation contributes (fz0 p + fz1 u + fm m)^2.
        let mut quad_cont = Matrix::zeros(3, 3);
        for (a, &za) in [(1, &fz[0]), (2, &fz[1])] {
            for (b, &zb) in [(1, &fz[0]), (2, &fz[1])] {
                quad_cont[(a, b)] = za * zb;
            }
        }
        let mut coup = Matrix::zeros(2, 3);
        for k in 0..2 {
            coup[(k, 1)] = fm[k] * fz[0];
            coup[(k, 2)] = fm[k] * fz[1];
        }
        let quad_mean = Matrix::from_fn(2, 2, |r, c| fm[r] * fm[c]);

        // Controller 1 carries no stage cost here; controller 2 pays for its
        // action on top of the shared continuation.
        let c = quad_cont.clone();
        let mut e = quad_cont;
        e[(2, 2)] += 1.0;

        let sigma_xx = dmatrix![4.0/3.0, 4.0/3.0; 4.0/3.0, 7.0/3.0];
        StageGameData {
            sigma: joint_covariance(&sigma_xx, &Matrix::zeros(0, 2), &dmatrix![0.0, 1.0]),
            c,
            e,
            lin: [Vector::zeros(3), Vector::zeros(3)],
            coup: [coup.clone(), coup],
            quad_mean: [quad_mean.clone(), quad_mean],
            lin_mean: [Matrix::zeros(1, 2), Matrix::zeros(1, 2)],
            constant: [11.0 / 7.0, 11.0 / 7.0],
            h: [Matrix::zeros(0, 2), dmatrix![0.0, 1.0]],
            mean: dvector![0.0, 0.0],
            n_x: 2,
            n_u: [0, 1],
            n_y: [0, 1],
        }
    }

    #[test]
    fn single_player_stage_matches_hand_solution() {
        let data = second_stage_data();
        data.validate().unwrap();
        let sol = solve_stage_game(&data).unwrap();
        assert_relative_eq!(sol.obs_gain[1][(0, 0)], -2.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(sol.intercept[1][0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(sol.mean_gain[1][(0, 0)], -0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.mean_gain[1][(0, 1)], 0.0, epsilon = 1e-12);
        assert!(sol.foc_residual < 1e-12);

        let phi1 = dmatrix![0.25, 0.0; 0.0, 0.0];
        let phi2 = dmatrix![0.5, 0.0; 0.0, 0.0];
        assert_relative_eq!(sol.phi[0], phi1, epsilon = 1e-12);
        assert_relative_eq!(sol.phi[1], phi2, epsilon = 1e-12);
        assert!(sol.xi[0].norm() < 1e-12 && sol.xi[1].norm() < 1e-12);
        assert_relative_eq!(sol.upsilon[0], 37.0 / 21.0, epsilon = 1e-12);
        assert_relative_eq!(sol.upsilon[1], 41.0 / 21.0, epsilon = 1e-12);
    }

    #[test]
    fn best_response_matches_posterior_shrinkage_rule() {
        let mut data = second_stage_data();
        let m = 0.9;
        data.mean = dvector![m, m];
        let rule = best_response_map(&data, 2, &AffineRule::zeros(0, 0)).unwrap();
        // -1/2 (m + 4/7 (y - m)) as a raw-observation rule.
        assert_relative_eq!(rule.gain[(0, 0)], -2.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(rule.offset[0], -3.0 / 14.0 * m, epsilon = 1e-12);

        let sol = solve_stage_game(&data).unwrap();
        let realized = sol.realized_rule(1, &data);
        assert!(rule.distance(&realized) < 1e-12);
    }

    #[test]
    fn decoupled_actions_solve_in_closed_form() {
        let sigma_xx = dmatrix![2.0, 0.5; 0.5, 1.0];
        let h1 = dmatrix![1.0, 0.0];
        let h2 = dmatrix![0.0, 1.0];
        let mut c = Matrix::zeros(4, 4);
        c.view_mut((0, 0), (2, 2)).copy_from(&dmatrix![1.0, 0.2; 0.2, 1.0]);
        c[(0, 2)] = 0.4;
        c[(2, 0)] = 0.4;
        c[(2, 2)] = 2.0;
        c[(3, 3)] = 1.0;
        let mut e = Matrix::zeros(4, 4);
        e[(0, 0)] = 0.5;
        e[(1, 1)] = 0.5;
        e[(1, 3)] = 0.3;
        e[(3, 1)] = 0.3;
        e[(2, 2)] = 1.0;
        e[(3, 3)] = 1.5;
        let data = StageGameData::decoupled_mean(
            c,
            e,
            [Vector::zeros(4), Vector::zeros(4)],
            h1,
            h2,
            sigma_xx.clone(),
            dvector![0.0, 0.0],
        )
        .unwrap();

        let report = check_existence_conditions(&data).unwrap();
        assert_eq!(report.rho_k1, 0.0);
        assert!(report.contraction);

        let sol = solve_stage_game(&data).unwrap();
        // T1 = -C22^-1 C12' Σ_xy1 R1 with C22 = 2, C12 = [0.4; 0], Σ_xy1 = [2; 0.5].
        let expected = -(0.4 * 2.0) / (2.0 * 2.0);
        assert_relative_eq!(sol.obs_gain[0][(0, 0)], expected, epsilon = 1e-12);
    }

    #[test]
    fn solver_agrees_with_best_response_iteration() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..25 {
            let sigma_xx = dmatrix![1.0 + rng.gen_range(0.0..1.0)];
            let h = dmatrix![1.0];
            let mut c = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-0.4..0.4));
            c = symmetrize(&c);
            let mut e = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-0.4..0.4));
            e = symmetrize(&e);
            for quad in [&mut c, &mut e] {
                for k in 0..3 {
                    quad[(k, k)] = 1.0 + rng.gen_range(0.0..1.0);
                }
            }
            let lin = [
                Vector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5)),
                Vector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5)),
            ];
            let mean = dvector![rng.gen_range(-1.0..1.0)];
            let data = StageGameData::decoupled_mean(
                c, e, lin, h.clone(), h.clone(), sigma_xx, mean,
            )
            .unwrap();
            let report = check_existence_conditions(&data).unwrap();
            if !report.contraction {
                continue;
            }

            let sol = solve_stage_game(&data).unwrap();
            let mut rules = [
                AffineRule::zeros(1, 1),
                AffineRule::zeros(1, 1),
            ];
            for _ in 0..400 {
                let next1 = best_response_map(&data, 1, &rules[1]).unwrap();
                let next2 = best_response_map(&data, 2, &next1).unwrap();
                let delta = next1.distance(&rules[0]) + next2.distance(&rules[1]);
                rules = [next1, next2];
                if delta < 1e-14 {
                    break;
                }
            }
            for i in 0..2 {
                let realized = sol.realized_rule(i, &data);
                assert!(
                    realized.distance(&rules[i]) < 1e-8,
                    "controller {i} iterate {:?} vs solved {:?}",
                    rules[i],
                    realized,
                );
            }
            // The solution is a best-response fixed point.
            let br1 = best_response_map(&data, 1, &sol.realized_rule(1, &data)).unwrap();
            assert!(br1.distance(&sol.realized_rule(0, &data)) < 1e-9);
        }
    }

    #[test]
    fn strong_coupling_fails_contraction_but_reports_fallback() {
        // Scalar arithmetic: C22 = E33 = 1, C23 = E23 = 2 gives K1 = 4. The
        // remaining diagonal entries keep the blocks positive semidefinite
        // without entering K1.
        let sigma_xx = dmatrix![1.0];
        let h = dmatrix![1.0];
        let mut c = Matrix::zeros(3, 3);
        c[(1, 1)] = 1.0;
        c[(1, 2)] = 2.0;
        c[(2, 1)] = 2.0;
        c[(2, 2)] = 4.1;
        let mut e = Matrix::zeros(3, 3);
        e[(2, 2)] = 1.0;
        e[(1, 2)] = 2.0;
        e[(2, 1)] = 2.0;
        e[(1, 1)] = 4.1;
        let data = StageGameData::decoupled_mean(
            c,
            e,
            [Vector::zeros(3), Vector::zeros(3)],
            h.clone(),
            h,
            sigma_xx,
            dvector![0.0],
        )
        .unwrap();
        let report = check_existence_conditions(&data).unwrap();
        assert_relative_eq!(report.rho_k1, 4.0, epsilon = 1e-9);
        assert!(!report.contraction);
        // Identical observations make Q = 1, so the gain system 1 - 4 is
        // nonsingular and the fallback path applies.
        assert_relative_eq!(report.rho_q, 1.0, epsilon = 1e-9);
        assert!(report.unique_linear_systems);
        assert!(solve_stage_game(&data).is_ok());
    }

    #[test]
    fn singular_gain_system_is_rejected() {
        // X = (x, w1, w2), Y^i = x + w^i: the observation overlap gives
        // Q = 1/4, and K1 = 4 puts the Stein system exactly on the pole.
        let sigma_xx = Matrix::identity(3, 3);
        let h1 = dmatrix![1.0, 1.0, 0.0];
        let h2 = dmatrix![1.0, 0.0, 1.0];
        let mut c = Matrix::zeros(5, 5);
        c[(3, 3)] = 1.0;
        c[(3, 4)] = 2.0;
        c[(4, 3)] = 2.0;
        c[(4, 4)] = 4.5;
        let mut e = Matrix::zeros(5, 5);
        e[(4, 4)] = 1.0;
        e[(3, 4)] = 2.0;
        e[(4, 3)] = 2.0;
        e[(3, 3)] = 4.5;
        let data = StageGameData::decoupled_mean(
            c,
            e,
            [Vector::zeros(5), Vector::zeros(5)],
            h1,
            h2,
            sigma_xx,
            Vector::zeros(3),
        )
        .unwrap();
        let report = check_existence_conditions(&data).unwrap();
        assert_relative_eq!(report.rho_k1, 4.0, epsilon = 1e-9);
        assert_relative_eq!(report.rho_q, 0.25, epsilon = 1e-9);
        assert!(!report.contraction);
        assert!(!report.unique_linear_systems);
        assert!(matches!(
            solve_stage_game(&data),
            Err(StageGameError::NoUniqueSolution { .. })
        ));
    }

    #[test]
    fn observation_cross_correlation_stays_contractive() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(1..4usize);
            let g = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let sigma_xx = &g * g.transpose() + Matrix::identity(n, n) * 0.1;
            let h1 = Matrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
            let h2 = Matrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
            let sigma = joint_covariance(&sigma_xx, &h1, &h2);
            let r1 = pinv(&sigma.view((n, n), (1, 1)).into_owned());
            let r2 = pinv(&sigma.view((n + 1, n + 1), (1, 1)).into_owned());
            let q = sigma.view((n, n + 1), (1, 1)).into_owned()
                * &r2
                * sigma.view((n + 1, n), (1, 1)).into_owned()
                * &r1;
            assert!(spectral_radius(&q).unwrap() <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn zero_linear_terms_give_zero_intercepts() {
        let data = second_stage_data();
        let sol = solve_stage_game(&data).unwrap();
        assert!(sol.intercept[0].norm() + sol.intercept[1].norm() < 1e-12);
    }
}
