//! Backward induction over the common-information belief state.
//!
//! Each stage of the dynamic game reduces to a static game in which the
//! hidden vector is `S_t = (X_t, P1_t, P2_t)`, controller i observes its
//! private block `P^i_t = H^i S_t`, and the cost couples the played actions
//! with the continuation value through the belief update
//!
//! ```text
//! M_{t+1} = F1_M M_t + F1_Z Z_{t+1},
//! Z_{t+1} = z_s S_t + z_1 U^1 + z_2 U^2 + z_w w.
//! ```
//!
//! Solving the static game stage by stage, from the terminal cost backwards,
//! yields prescriptions `U^i = T^i (P^i - H^i M_t) + l^i + L^i M_t` whose
//! coefficients do not depend on the realized mean, and value functions
//! `V^i_t(m) = m' Φ^i_t m + Ξ^i_t m + Υ^i_t`.

use thiserror::Error;

use crate::belief::{
    check_strategy_independence, propagate_belief, BeliefChain, IndependenceReport,
};
use crate::info::{build_info_maps, InfoMaps};
use crate::linalg::{hstack, LinalgError, Matrix, Vector};
use crate::model::{GameSpec, ModelError, ValidateOptions, ValidationReport};
use crate::stage_game::{
    check_existence_conditions, joint_covariance, solve_stage_game, ConditionReport,
    StageGameData, StageGameError, StageSolution,
};

/// A quadratic function of the belief mean: `m' phi m + xi m + upsilon`.
#[derive(Debug, Clone)]
pub struct ValueQuadratic {
    pub phi: Matrix,
    pub xi: Matrix,
    pub upsilon: f64,
}

impl ValueQuadratic {
    pub fn zeros(dim: usize) -> Self {
        ValueQuadratic { phi: Matrix::zeros(dim, dim), xi: Matrix::zeros(1, dim), upsilon: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn evaluate(&self, m: &Vector) -> f64 {
        (m.transpose() * &self.phi * m)[(0, 0)] + (&self.xi * m)[(0, 0)] + self.upsilon
    }
}

/// Everything the backward pass produces.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// Static-game solutions for stages `1..T-1`.
    pub stage_solutions: Vec<StageSolution>,
    /// Value quadratics for both controllers, stages `1..T`.
    pub values: Vec<[ValueQuadratic; 2]>,
    /// Uniqueness diagnostics per solved stage.
    pub condition_reports: Vec<ConditionReport>,
    pub chain: BeliefChain,
    pub independence: IndependenceReport,
    /// `E[V^i_1(M_1)]`: the equilibrium cost of the whole game.
    pub expected_costs: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Skip the dependent-beliefs error (the recursion is then a model
    /// choice, not a theorem).
    pub assume_independence: bool,
    pub independence_trials: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { assume_independence: false, independence_trials: 8, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("specification failed validation: {}", report.failures().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", "))]
    InvalidSpec { report: ValidationReport },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("belief recursion is strategy-dependent (max covariance deviation {:.3e}, max mean deviation {:.3e})", report.max_sigma_deviation, report.max_mean_deviation)]
    DependentBeliefs { report: IndependenceReport },
    #[error("stage {stage}: no unique equilibrium (rho(K1) = {:.6}, gain system min singular value {:.3e})", report.rho_k1, report.gain_system_min_singular)]
    Existence { stage: usize, report: ConditionReport },
    #[error("stage {stage}: {source}")]
    StageGame {
        stage: usize,
        #[source]
        source: StageGameError,
    },
}

/// Terminal value: the expected terminal cost given the final common
/// information, as a quadratic in the final belief mean.
pub fn terminal_value(spec: &GameSpec, maps: &InfoMaps, chain: &BeliefChain) -> [ValueQuadratic; 2] {
    let t = spec.horizon;
    let n_x = spec.n_x(t);
    let s_dim = maps.s_dim(t);
    let sigma_xx = chain.sigma[t - 1].view((0, 0), (n_x, n_x)).into_owned();
    [0, 1].map(|i| {
        let r = &spec.costs[i].terminal;
        let mut phi = Matrix::zeros(s_dim, s_dim);
        phi.view_mut((0, 0), (n_x, n_x)).copy_from(r);
        ValueQuadratic {
            phi,
            xi: Matrix::zeros(1, s_dim),
            upsilon: (r * &sigma_xx).trace(),
        }
    })
}

/// Builds the static game played at stage `t` given both continuation values.
pub fn lift_costs(
    spec: &GameSpec,
    maps: &InfoMaps,
    chain: &BeliefChain,
    t: usize,
    v_next: &[ValueQuadratic; 2],
) -> StageGameData {
    let stage = &chain.stages[t - 1];
    let s_dim = maps.s_dim(t);
    let n_x = spec.n_x(t);
    let n_u = [spec.n_u(1, t), spec.n_u(2, t)];
    let v_dim = s_dim + n_u[0] + n_u[1];

    // Belief-mean update as an affine map of v = (S_t, U1, U2) plus noise.
    let r_v = &stage.f_z
        * hstack(&[
            stage.z_from_state.clone(),
            stage.z_from_action[0].clone(),
            stage.z_from_action[1].clone(),
        ]);
    let r_w = &stage.f_z * &stage.z_from_noise;
    let noise_term = &r_w * &stage.noise_cov * r_w.transpose();

    // Stage cost lives on (X_t, U1, U2); embed it into v.
    let mut p_xu = Matrix::zeros(n_x + n_u[0] + n_u[1], v_dim);
    for r in 0..n_x {
        p_xu[(r, r)] = 1.0;
    }
    for r in 0..n_u[0] + n_u[1] {
        p_xu[(n_x + r, s_dim + r)] = 1.0;
    }

    let mut c_e = [Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
    let mut lin = [Vector::zeros(0), Vector::zeros(0)];
    let mut coup = [Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
    let mut quad_mean = [Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
    let mut lin_mean = [Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
    let mut constant = [0.0, 0.0];
    for i in 0..2 {
        let cont = &v_next[i];
        c_e[i] = p_xu.transpose() * &spec.costs[i].stage[t - 1] * &p_xu
            + r_v.transpose() * &cont.phi * &r_v;
        let lin_row = 0.5 * (&cont.xi * &r_v);
        lin[i] = Vector::from_iterator(v_dim, lin_row.iter().cloned());
        coup[i] = stage.f_m.transpose() * &cont.phi * &r_v;
        quad_mean[i] = stage.f_m.transpose() * &cont.phi * &stage.f_m;
        lin_mean[i] = &cont.xi * &stage.f_m;
        constant[i] = cont.upsilon + (&cont.phi * &noise_term).trace();
    }

    // Controller i observes its private block of S_t.
    let h = [1, 2].map(|i| {
        let mut sel = Matrix::zeros(maps.p_dim(i, t), s_dim);
        for r in 0..maps.p_dim(i, t) {
            sel[(r, maps.private_offset(i, t) + r)] = 1.0;
        }
        sel
    });
    let sigma = joint_covariance(&chain.sigma[t - 1], &h[0], &h[1]);

    StageGameData {
        c: c_e[0].clone(),
        e: c_e[1].clone(),
        lin: lin.clone(),
        coup: coup.clone(),
        quad_mean: quad_mean.clone(),
        lin_mean: lin_mean.clone(),
        constant,
        sigma,
        n_y: [h[0].nrows(), h[1].nrows()],
        h,
        mean: Vector::zeros(s_dim),
        n_x: s_dim,
        n_u,
    }
}

/// Full pipeline: validate, build information maps, propagate beliefs, check
/// strategy independence, then induct backwards.
pub fn solve_cimpe(spec: &GameSpec, options: &SolveOptions) -> Result<EquilibriumSolution, SolveError> {
    let validation = crate::model::validate_spec(spec, ValidateOptions::default())?;
    if !validation.passed() {
        return Err(SolveError::InvalidSpec { report: validation });
    }
    let maps = build_info_maps(spec)?;
    let chain = propagate_belief(spec, &maps)?;
    let independence =
        check_strategy_independence(spec, &maps, &chain, options.independence_trials, options.seed);
    if !independence.passed && !options.assume_independence {
        return Err(SolveError::DependentBeliefs { report: independence });
    }

    let horizon = spec.horizon;
    let mut values = vec![terminal_value(spec, &maps, &chain)];
    let mut stage_solutions = Vec::new();
    let mut condition_reports = Vec::new();
    for t in (1..horizon).rev() {
        let data = lift_costs(spec, &maps, &chain, t, &values[0]);
        let report = check_existence_conditions(&data)
            .map_err(|source| SolveError::StageGame { stage: t, source })?;
        if !report.solvable() {
            return Err(SolveError::Existence { stage: t, report });
        }
        let solution = solve_stage_game(&data)
            .map_err(|source| SolveError::StageGame { stage: t, source })?;
        let value = [0, 1].map(|i| ValueQuadratic {
            phi: solution.phi[i].clone(),
            xi: solution.xi[i].clone(),
            upsilon: solution.upsilon[i],
        });
        values.insert(0, value);
        stage_solutions.insert(0, solution);
        condition_reports.insert(0, report);
    }

    let mean_cov = &chain.init_gain * &chain.cov_c1 * chain.init_gain.transpose();
    let expected_costs =
        [0, 1].map(|i| (&values[0][i].phi * &mean_cov).trace() + values[0][i].upsilon);

    Ok(EquilibriumSolution {
        stage_solutions,
        values,
        condition_reports,
        chain,
        independence,
        expected_costs,
    })
}
