//! Independent verification of solved equilibria on the original game.
//!
//! The solver produces stage prescriptions indexed by the belief mean; here
//! they are translated into plain feedback laws `u^i_t = g^i_t(p^i_t, c_t)`
//! on realized information, and those laws are audited three ways:
//!
//! 1. closed form: under affine laws the closed loop is jointly Gaussian, so
//!    every expected cost is an exact trace formula;
//! 2. Monte-Carlo: forward simulation with counter-based per-sample random
//!    streams, reproducible for a fixed seed;
//! 3. deviations: perturb one controller's law and measure the cost change,
//!    both along random directions and against the exact per-stage optimum
//!    reconstructed from the cost's quadratic dependence on that stage's
//!    parameters.
//!
//! The module also carries a hard-coded one-parameter family of equilibria
//! for the bundled two-channel game, used as an external oracle: its member
//! at parameter zero is the solver's equilibrium, all members pass the
//! deviation test, and their closed-form costs vary with the parameter.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::belief::mix_seed;
use crate::induction::EquilibriumSolution;
use crate::info::{ComponentList, InfoMaps};
use crate::linalg::{pinv, symmetrize, Matrix, Vector};
use crate::model::GameSpec;
use crate::trajectory::{build_signals, AffineControlLaw, AffineSignal, StrategyProfile};

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("family parameter {lambda} sits at the excluded pole -59/22")]
    DegenerateParameter { lambda: f64 },
}

// ---- strategies and prescriptions ---------------------------------------------

/// A stage prescription: a family of private-information rules indexed by the
/// common history, `u = gain_private p + (offset_gain c + offset_intercept)`.
/// Structurally the same data as a control law, grouped the other way.
#[derive(Debug, Clone, PartialEq)]
pub struct Prescription {
    pub gain_private: Matrix,
    pub offset_gain: Matrix,
    pub offset_intercept: Vector,
}

/// Regroups a law into the prescription view (no arithmetic).
pub fn to_prescription(law: &AffineControlLaw) -> Prescription {
    Prescription {
        gain_private: law.gain_private.clone(),
        offset_gain: law.gain_common.clone(),
        offset_intercept: law.intercept.clone(),
    }
}

/// Regroups a prescription back into a control law (no arithmetic).
pub fn to_control_law(prescription: &Prescription) -> AffineControlLaw {
    AffineControlLaw {
        gain_private: prescription.gain_private.clone(),
        gain_common: prescription.offset_gain.clone(),
        intercept: prescription.offset_intercept.clone(),
    }
}

/// Composes each stage solution with the belief-mean chain, producing laws on
/// the realized information vectors: `u^i_t = T^i (p^i - H^i W_t c_t) + l^i +
/// L^i W_t c_t`, i.e. private gain `T^i` and common gain `(L^i - T^i H^i) W_t`.
pub fn realize_control_laws(
    maps: &InfoMaps,
    solution: &EquilibriumSolution,
) -> StrategyProfile {
    let horizon = solution.values.len();
    let mut laws: [Vec<AffineControlLaw>; 2] = [Vec::new(), Vec::new()];
    for t in 1..horizon {
        let sol = &solution.stage_solutions[t - 1];
        let w = &solution.chain.mean_chain[t - 1];
        for i in 0..2 {
            let p_dim = maps.p_dim(i as u8 + 1, t);
            let s_dim = maps.s_dim(t);
            let mut h = Matrix::zeros(p_dim, s_dim);
            for r in 0..p_dim {
                h[(r, maps.private_offset(i as u8 + 1, t) + r)] = 1.0;
            }
            let gain_common = (&sol.mean_gain[i] - &sol.obs_gain[i] * h) * w;
            laws[i].push(AffineControlLaw {
                gain_private: sol.obs_gain[i].clone(),
                gain_common,
                intercept: sol.intercept[i].clone(),
            });
        }
    }
    StrategyProfile { laws }
}

// ---- closed-form evaluation ----------------------------------------------------

/// Exact expected total costs of both controllers under affine laws: the
/// closed loop is jointly Gaussian, so each stage cost is a trace formula.
pub fn closed_form_costs(spec: &GameSpec, maps: &InfoMaps, profile: &StrategyProfile) -> [f64; 2] {
    let table = build_signals(spec, maps, profile);
    let mut costs = [0.0, 0.0];
    for t in 1..spec.horizon {
        let joint = AffineSignal::stack(
            &[&table.x[t - 1], &table.u[0][t - 1], &table.u[1][t - 1]],
            table.layout.dim,
        );
        for i in 0..2 {
            costs[i] += joint.expected_quadratic(&spec.costs[i].stage[t - 1], &table.omega_cov);
        }
    }
    let x_last = &table.x[spec.horizon - 1];
    for i in 0..2 {
        costs[i] += x_last.expected_quadratic(&spec.costs[i].terminal, &table.omega_cov);
    }
    costs
}

// ---- simulation ----------------------------------------------------------------

/// Monte-Carlo cost estimate. Standard errors are sample standard deviations
/// divided by `sqrt(n)`.
#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub means: [f64; 2],
    pub std_errors: [f64; 2],
    pub samples: usize,
    pub seed: u64,
}

/// Square factor `F` with `F F' = m`, tolerant of singular covariances.
fn psd_factor(m: &Matrix) -> Matrix {
    if m.is_empty() {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let n = m.nrows();
    let mut f = Matrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0);
        let col = eig.eigenvectors.column(k) * lam.sqrt();
        f.column_mut(k).copy_from(&col);
    }
    f
}

/// Noise factors shared by every sample of a simulation run.
struct NoiseFactors {
    initial: Matrix,
    process: Vec<Matrix>,
    observation: [Vec<Matrix>; 2],
}

impl NoiseFactors {
    fn new(spec: &GameSpec) -> Self {
        NoiseFactors {
            initial: psd_factor(&spec.initial_state_cov),
            process: spec.dynamics.iter().map(|d| psd_factor(&d.noise_cov)).collect(),
            observation: [0, 1].map(|i| {
                spec.observations[i].iter().map(|o| psd_factor(&o.noise_cov)).collect()
            }),
        }
    }
}

fn draw(rng: &mut rand_chacha::ChaCha8Rng, factor: &Matrix) -> Vector {
    let z = Vector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    factor * z
}

fn gather(list: &ComponentList, obs: &[Vec<Vector>; 2], acts: &[Vec<Vector>; 2]) -> Vector {
    let mut out = Vector::zeros(list.dim());
    let mut offset = 0;
    for component in &list.components {
        let i = component.controller as usize - 1;
        let source = match component.kind {
            crate::info::ComponentKind::Observation => &obs[i][component.stage - 1],
            crate::info::ComponentKind::Action => &acts[i][component.stage - 1],
        };
        out.rows_mut(offset, component.dim).copy_from(source);
        offset += component.dim;
    }
    out
}

/// One forward roll of the game under the given laws. The visitor sees every
/// stage's realized vectors; the return value is the pair of incurred costs.
/// Draw order per sample: initial state, then per stage both observation
/// noises (controller 1 first) and, before the last stage, the process noise.
fn roll_sample(
    spec: &GameSpec,
    maps: &InfoMaps,
    profile: &StrategyProfile,
    factors: &NoiseFactors,
    rng: &mut rand_chacha::ChaCha8Rng,
    mut visit: impl FnMut(usize, &Vector, &Vector, &Vector, Option<&Vector>, Option<&Vector>),
) -> [f64; 2] {
    let mut x = draw(rng, &factors.initial);
    let mut obs: [Vec<Vector>; 2] = [Vec::new(), Vec::new()];
    let mut acts: [Vec<Vector>; 2] = [Vec::new(), Vec::new()];
    let mut costs = [0.0, 0.0];
    for t in 1..=spec.horizon {
        for i in 0..2 {
            let y = &spec.observations[i][t - 1].h * &x + draw(rng, &factors.observation[i][t - 1]);
            obs[i].push(y);
        }
        if t < spec.horizon {
            let common = gather(&maps.common[t - 1], &obs, &acts);
            let u = [0, 1].map(|i| {
                let private = gather(&maps.private[i][t - 1], &obs, &acts);
                profile.laws[i][t - 1].decide(&private, &common)
            });
            visit(t, &x, &obs[0][t - 1], &obs[1][t - 1], Some(&u[0]), Some(&u[1]));

            let mut v = Vector::zeros(x.len() + u[0].len() + u[1].len());
            v.rows_mut(0, x.len()).copy_from(&x);
            v.rows_mut(x.len(), u[0].len()).copy_from(&u[0]);
            v.rows_mut(x.len() + u[0].len(), u[1].len()).copy_from(&u[1]);
            for i in 0..2 {
                costs[i] += (v.transpose() * &spec.costs[i].stage[t - 1] * &v)[(0, 0)];
            }

            let d = &spec.dynamics[t - 1];
            x = &d.a * &x + &d.b1 * &u[0] + &d.b2 * &u[1] + draw(rng, &factors.process[t - 1]);
            acts[0].push(u[0].clone());
            acts[1].push(u[1].clone());
        } else {
            visit(t, &x, &obs[0][t - 1], &obs[1][t - 1], None, None);
            for i in 0..2 {
                costs[i] += (x.transpose() * &spec.costs[i].terminal * &x)[(0, 0)];
            }
        }
    }
    costs
}

/// Estimates both controllers' expected costs by forward simulation. Sample
/// `k` uses an independent random stream derived from `(seed, k)`, and the
/// accumulation order is fixed, so results are reproducible byte for byte.
pub fn simulate(
    spec: &GameSpec,
    maps: &InfoMaps,
    profile: &StrategyProfile,
    samples: usize,
    seed: u64,
) -> CostEstimate {
    let factors = NoiseFactors::new(spec);
    let mut mean = [0.0f64; 2];
    let mut m2 = [0.0f64; 2];
    for k in 0..samples {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
        let costs = roll_sample(spec, maps, profile, &factors, &mut rng, |_, _, _, _, _, _| {});
        for i in 0..2 {
            let delta = costs[i] - mean[i];
            mean[i] += delta / (k + 1) as f64;
            m2[i] += delta * (costs[i] - mean[i]);
        }
    }
    let std_errors = [0, 1].map(|i| {
        if samples > 1 {
            (m2[i] / (samples - 1) as f64).sqrt() / (samples as f64).sqrt()
        } else {
            f64::INFINITY
        }
    });
    CostEstimate { means: mean, std_errors, samples, seed }
}

/// Writes simulated trajectories as CSV with columns
/// `t,x,y1,y2,u1,u2,sample_id`; vector-valued cells join their entries with
/// semicolons, and the final stage has empty action cells.
pub fn write_trajectories<W: std::io::Write>(
    spec: &GameSpec,
    maps: &InfoMaps,
    profile: &StrategyProfile,
    samples: usize,
    seed: u64,
    out: &mut W,
) -> std::io::Result<()> {
    let factors = NoiseFactors::new(spec);
    writeln!(out, "t,x,y1,y2,u1,u2,sample_id")?;
    let cell = |v: &Vector| -> String {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
    };
    let mut rows: Vec<String> = Vec::new();
    for k in 0..samples {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64));
        roll_sample(spec, maps, profile, &factors, &mut rng, |t, x, y1, y2, u1, u2| {
            rows.push(format!(
                "{},{},{},{},{},{},{}",
                t,
                cell(x),
                cell(y1),
                cell(y2),
                u1.map(&cell).unwrap_or_default(),
                u2.map(&cell).unwrap_or_default(),
                k
            ));
        });
    }
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

// ---- deviation testing ----------------------------------------------------------

/// Number of scalar parameters in one stage law.
fn law_dim(law: &AffineControlLaw) -> usize {
    law.gain_private.len() + law.gain_common.len() + law.intercept.len()
}

/// Adds a flat parameter offset to the chosen stages of one controller's law.
fn perturb(
    profile: &StrategyProfile,
    controller: usize,
    stages: &[usize],
    delta: &[f64],
) -> StrategyProfile {
    let mut out = profile.clone();
    let mut pos = 0;
    for &t in stages {
        let law = &mut out.laws[controller][t - 1];
        for target in [&mut law.gain_private, &mut law.gain_common] {
            for r in 0..target.nrows() {
                for c in 0..target.ncols() {
                    target[(r, c)] += delta[pos];
                    pos += 1;
                }
            }
        }
        for r in 0..law.intercept.len() {
            law.intercept[r] += delta[pos];
            pos += 1;
        }
    }
    debug_assert_eq!(pos, delta.len());
    out
}

/// Largest cost decrease available to one controller, over random joint
/// perturbations of all its stage laws plus, stage by stage, the exact
/// minimizer of the cost's quadratic dependence on that stage's parameters.
pub fn deviation_test(
    spec: &GameSpec,
    maps: &InfoMaps,
    profile: &StrategyProfile,
    deviator: u8,
    n_directions: usize,
    magnitude: f64,
    seed: u64,
) -> f64 {
    let i = deviator as usize - 1;
    let j0 = closed_form_costs(spec, maps, profile)[i];
    let stages: Vec<usize> = (1..spec.horizon).collect();
    let dims: Vec<usize> = stages.iter().map(|&t| law_dim(&profile.laws[i][t - 1])).collect();
    let total_dim: usize = dims.iter().sum();
    let mut best = f64::NEG_INFINITY;

    if total_dim == 0 {
        return 0.0;
    }

    // Random joint directions across all stages.
    for direction in 0..n_directions {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x0D1F + direction as u64));
        let mut delta: Vec<f64> =
            (0..total_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm > 0.0 {
            for d in &mut delta {
                *d *= magnitude / norm;
            }
        }
        let perturbed = perturb(profile, i, &stages, &delta);
        best = best.max(j0 - closed_form_costs(spec, maps, &perturbed)[i]);
    }

    // Exact per-stage optimum: holding the other stages fixed, the cost is a
    // quadratic in this stage's parameters, reconstructed from finitely many
    // exact evaluations and minimized in closed form.
    for (idx, &t) in stages.iter().enumerate() {
        let d = dims[idx];
        if d == 0 {
            continue;
        }
        let h = 0.5;
        let eval = |delta: &[f64]| -> f64 {
            let perturbed = perturb(profile, i, &[t], delta);
            closed_form_costs(spec, maps, &perturbed)[i]
        };
        let unit = |k: usize, scale: f64| -> Vec<f64> {
            let mut v = vec![0.0; d];
            v[k] = scale;
            v
        };
        let mut grad = Vector::zeros(d);
        let mut hess = Matrix::zeros(d, d);
        let mut plus = vec![0.0; d];
        for k in 0..d {
            let f_plus = eval(&unit(k, h));
            let f_minus = eval(&unit(k, -h));
            grad[k] = (f_plus - f_minus) / (2.0 * h);
            hess[(k, k)] = (f_plus + f_minus - 2.0 * j0) / (h * h);
            plus[k] = f_plus;
        }
        for a in 0..d {
            for b in a + 1..d {
                let mut both = vec![0.0; d];
                both[a] = h;
                both[b] = h;
                let f_ab = eval(&both);
                let mixed = (f_ab - plus[a] - plus[b] + j0) / (h * h);
                hess[(a, b)] = mixed;
                hess[(b, a)] = mixed;
            }
        }
        let step = -pinv(&hess) * &grad;
        let candidate = eval(step.as_slice());
        best = best.max(j0 - candidate);
    }
    best
}

// ---- hard-coded equilibrium family ----------------------------------------------

/// The one-parameter family of equilibria of the bundled two-channel game.
/// Both first-stage rules are scalar gains with denominator `22 lambda + 59`;
/// the second-stage rule of controller 2 shrinks toward the conditional mean
/// and adds `lambda` times controller 1's first-stage action innovation.
/// Returns the laws and the closed-form expected costs.
pub fn lambda_family(lambda: f64) -> Result<(StrategyProfile, [f64; 2]), VerifierError> {
    let denom = 22.0 * lambda + 59.0;
    if denom.abs() <= 1e-9 {
        return Err(VerifierError::DegenerateParameter { lambda });
    }
    let g1 = -(10.0 * lambda + 5.0) / denom;
    let g2 = -(2.0 * lambda + 9.0) / denom;

    let stage1 = |gain: f64| AffineControlLaw {
        gain_private: Matrix::from_element(1, 1, gain),
        gain_common: Matrix::zeros(1, 0),
        intercept: Vector::zeros(1),
    };
    // Common history at the second stage: (y11, y21, u11, u21) with the
    // conditional mean composite (1/3, 1/3, 1, 1).
    let mean_composite = [1.0 / 3.0, 1.0 / 3.0, 1.0, 1.0];
    let mut gain_common = Matrix::zeros(1, 4);
    for (k, &w) in mean_composite.iter().enumerate() {
        gain_common[(0, k)] = -3.0 / 14.0 * w;
    }
    gain_common[(0, 2)] += lambda;
    gain_common[(0, 0)] -= lambda * g1;
    let stage2_c2 = AffineControlLaw {
        gain_private: Matrix::from_element(1, 1, -2.0 / 7.0),
        gain_common,
        intercept: Vector::zeros(1),
    };
    let stage2_c1 = AffineControlLaw::zeros(0, 0, 4);

    let profile = StrategyProfile {
        laws: [vec![stage1(g1), stage2_c1], vec![stage1(g2), stage2_c2]],
    };

    let a = -8.0 * lambda + 44.0;
    let b = 16.0 * lambda + 32.0;
    let e_m = 2.0 * (a * a + b * b + a * b) / (9.0 * denom * denom);
    let j1 = 0.25 * e_m + 2.0 * (10.0 * lambda + 5.0).powi(2) / (denom * denom) + 37.0 / 21.0;
    let j2 = 0.5 * e_m + 2.0 * (2.0 * lambda + 9.0).powi(2) / (denom * denom) + 41.0 / 21.0;
    Ok((profile, [j1, j2]))
}
