//! Bundled game instances.
//!
//! These serve three purposes: they are the specs shipped by the CLI's
//! `example` subcommand, they are fixtures for the unit and acceptance tests,
//! and they document by construction what a well-formed [`GameSpec`] looks
//! like. All of them use zero-mean unit-scale primitives unless a seed says
//! otherwise.

use std::collections::BTreeSet;

use nalgebra::dmatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{Matrix, Vector};
use crate::model::{
    ComponentId, CostSpec, GameSpec, InfoStructure, ObservationChannel, StageDynamics,
};
use crate::stage_game::{check_existence_conditions, joint_covariance, StageGameData};

fn ids(pairs: &[(u8, usize)]) -> BTreeSet<ComponentId> {
    pairs.iter().map(|&(controller, stage)| ComponentId { controller, stage }).collect()
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0))
}

fn rand_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let g = rand_mat(rng, n, n, scale);
    &g * g.transpose() + Matrix::identity(n, n) * 0.1 * scale
}

/// The bundled three-stage scalar game with two observation channels and
/// asymmetric sharing (CLI name `six`).
///
/// ```text
/// X_2 = X_1 + U1_1 + U2_1 + W0_1        Yi_1 = X_1 + Wi_1   (both channels)
/// X_3 = X_2 + U2_2 + W0_2               Y2_2 = X_2 + W2_2   (channel 2 only)
/// ```
///
/// with every variance equal to 1. Controller 1 acts only at stage 1;
/// controller 2 acts at both decision stages. Stage-1 observations become
/// common at stage 2, `Y2_2` becomes common at stage 3, and all actions are
/// shared one step after they are taken. Costs:
///
/// ```text
/// J1 = E[(U1_1)^2 + (X_3)^2]
/// J2 = E[(U2_1)^2 + (U2_2)^2 + (X_3)^2]
/// ```
pub fn two_channel_spec() -> GameSpec {
    let one = scalar(1.0);
    let empty_row = Matrix::zeros(0, 1);
    let empty_cov = Matrix::zeros(0, 0);
    GameSpec {
        horizon: 3,
        state_dims: vec![1, 1, 1],
        action_dims: [vec![1, 0], vec![1, 1]],
        observation_dims: [vec![1, 0, 0], vec![1, 1, 0]],
        initial_state_cov: one.clone(),
        dynamics: vec![
            StageDynamics {
                a: one.clone(),
                b1: one.clone(),
                b2: one.clone(),
                noise_cov: one.clone(),
            },
            StageDynamics {
                a: one.clone(),
                b1: Matrix::zeros(1, 0),
                b2: one.clone(),
                noise_cov: one.clone(),
            },
        ],
        observations: [
            vec![
                ObservationChannel { h: one.clone(), noise_cov: one.clone() },
                ObservationChannel { h: empty_row.clone(), noise_cov: empty_cov.clone() },
                ObservationChannel { h: empty_row.clone(), noise_cov: empty_cov.clone() },
            ],
            vec![
                ObservationChannel { h: one.clone(), noise_cov: one.clone() },
                ObservationChannel { h: one.clone(), noise_cov: one.clone() },
                ObservationChannel { h: empty_row, noise_cov: empty_cov },
            ],
        ],
        costs: [
            CostSpec {
                stage: vec![
                    dmatrix![0.0, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 0.0],
                    Matrix::zeros(2, 2),
                ],
                terminal: one.clone(),
            },
            CostSpec {
                stage: vec![
                    dmatrix![0.0, 0.0, 0.0; 0.0, 0.0, 0.0; 0.0, 0.0, 1.0],
                    dmatrix![0.0, 0.0; 0.0, 1.0],
                ],
                terminal: one,
            },
        ],
        info: InfoStructure {
            observations: [
                vec![
                    ids(&[(1, 1)]),
                    ids(&[(1, 1), (2, 1)]),
                    ids(&[(1, 1), (2, 1), (2, 2)]),
                ],
                vec![
                    ids(&[(2, 1)]),
                    ids(&[(1, 1), (2, 1), (2, 2)]),
                    ids(&[(1, 1), (2, 1), (2, 2)]),
                ],
            ],
            actions: [
                vec![ids(&[]), ids(&[(1, 1), (2, 1)]), ids(&[(1, 1), (2, 1), (2, 2)])],
                vec![ids(&[]), ids(&[(1, 1), (2, 1)]), ids(&[(1, 1), (2, 1), (2, 2)])],
            ],
        },
    }
}

/// The same game as [`two_channel_spec`] except that controllers never share
/// actions: each remembers only its own. Observation sharing is unchanged, so
/// all structural checks still pass, but the belief given common information
/// now depends on the strategy profile (the other's past action can no longer
/// be subtracted out), so the strategy-independence check fails.
pub fn two_channel_no_sharing_spec() -> GameSpec {
    let mut spec = two_channel_spec();
    spec.info.actions = [
        vec![ids(&[]), ids(&[(1, 1)]), ids(&[(1, 1)])],
        vec![ids(&[]), ids(&[(2, 1)]), ids(&[(2, 1), (2, 2)])],
    ];
    spec
}

/// A four-stage game with one global and two local state components,
/// randomly parameterized from `seed`.
///
/// The state is `x = (x0, x1, x2)`: `x0` is observed perfectly by both
/// controllers through a shared noiseless channel, while `x1` and `x2` are
/// never observed. Each component is driven by the global component and the
/// actions only:
///
/// ```text
/// x0' = a0 x0 + b1 u1 + b2 u2 + w0
/// xi' = ai x0 + di1 u1 + di2 u2 + wi      i = 1, 2
/// ```
///
/// Actions are shared with one step delay, so the common information pins
/// `x0` exactly and leaves `xi` with exactly its driving-noise variance:
/// the belief covariance is `diag(0, var(w1), var(w2))` at every stage after
/// the first. Costs are separable: controller `i` pays for `x0`, its own
/// local `xi`, and both actions.
pub fn global_local_spec(seed: u64) -> GameSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = 4;

    let mut dynamics = Vec::new();
    for _ in 1..horizon {
        // every state component is driven by the global one only
        let mut a = Matrix::zeros(3, 3);
        for r in 0..3 {
            a[(r, 0)] = rng.gen_range(-1.0..1.0);
        }
        let b1 = rand_mat(&mut rng, 3, 1, 1.0);
        let b2 = rand_mat(&mut rng, 3, 1, 1.0);
        let noise_cov = Matrix::from_diagonal(&nalgebra::dvector![
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5)
        ]);
        dynamics.push(StageDynamics { a, b1, b2, noise_cov });
    }

    let global_channel = ObservationChannel {
        h: dmatrix![1.0, 0.0, 0.0],
        noise_cov: Matrix::zeros(1, 1),
    };
    let no_channel = ObservationChannel { h: Matrix::zeros(0, 3), noise_cov: Matrix::zeros(0, 0) };

    let mut costs = Vec::new();
    for i in 0..2 {
        let mut stage = Vec::new();
        for _ in 1..horizon {
            let mut r = Matrix::zeros(5, 5);
            r[(0, 0)] = rng.gen_range(0.2..2.0);
            r[(1 + i, 1 + i)] = rng.gen_range(0.2..2.0);
            r[(3, 3)] = rng.gen_range(0.2..2.0);
            r[(4, 4)] = rng.gen_range(0.2..2.0);
            stage.push(r);
        }
        let mut terminal = Matrix::zeros(3, 3);
        terminal[(0, 0)] = rng.gen_range(0.2..2.0);
        terminal[(1 + i, 1 + i)] = rng.gen_range(0.2..2.0);
        costs.push(CostSpec { stage, terminal });
    }
    let [c1, c2] = <[CostSpec; 2]>::try_from(costs).unwrap();

    let shared_obs = |t: usize| ids(&(1..=t).map(|s| (1u8, s)).collect::<Vec<_>>());
    let shared_act = |t: usize| {
        let mut pairs = Vec::new();
        for s in 1..t {
            pairs.push((1u8, s));
            pairs.push((2u8, s));
        }
        ids(&pairs)
    };
    let obs_sets: Vec<_> = (1..=horizon).map(shared_obs).collect();
    let act_sets: Vec<_> = (1..=horizon).map(shared_act).collect();

    GameSpec {
        horizon,
        state_dims: vec![3; horizon],
        action_dims: [vec![1; horizon - 1], vec![1; horizon - 1]],
        observation_dims: [vec![1; horizon], vec![0; horizon]],
        initial_state_cov: Matrix::from_diagonal(&nalgebra::dvector![
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5)
        ]),
        dynamics,
        observations: [
            vec![global_channel; horizon],
            vec![no_channel; horizon],
        ],
        costs: [c1, c2],
        info: InfoStructure {
            observations: [obs_sets.clone(), obs_sets],
            actions: [act_sets.clone(), act_sets],
        },
    }
}

/// A two-stage game engineered so that the one-stage game at stage 1 has no
/// unique affine equilibrium: the action cross-coupling gives spectral radius
/// 4 and the observation geometry gives a conditioning chain of 1/4, so the
/// vectorized gain system is exactly singular. Everything is shared at stage
/// 2, so the belief checks all pass; only the existence conditions fail.
pub fn existence_failure_spec() -> GameSpec {
    let one = scalar(1.0);
    let empty_row = Matrix::zeros(0, 1);
    let empty_cov = Matrix::zeros(0, 0);
    GameSpec {
        horizon: 2,
        state_dims: vec![1, 1],
        action_dims: [vec![1], vec![1]],
        observation_dims: [vec![1, 0], vec![1, 0]],
        initial_state_cov: one.clone(),
        dynamics: vec![StageDynamics {
            a: one.clone(),
            b1: one.clone(),
            b2: one.clone(),
            noise_cov: one.clone(),
        }],
        observations: [
            vec![
                ObservationChannel { h: one.clone(), noise_cov: one.clone() },
                ObservationChannel { h: empty_row.clone(), noise_cov: empty_cov.clone() },
            ],
            vec![
                ObservationChannel { h: one, noise_cov: scalar(1.0) },
                ObservationChannel { h: empty_row, noise_cov: empty_cov },
            ],
        ],
        costs: [
            CostSpec {
                stage: vec![dmatrix![0.0, 0.0, 0.0; 0.0, 1.0, 2.0; 0.0, 2.0, 5.0]],
                terminal: Matrix::zeros(1, 1),
            },
            CostSpec {
                stage: vec![dmatrix![0.0, 0.0, 0.0; 0.0, 5.0, 2.0; 0.0, 2.0, 1.0]],
                terminal: Matrix::zeros(1, 1),
            },
        ],
        info: InfoStructure {
            observations: [
                vec![ids(&[(1, 1)]), ids(&[(1, 1), (2, 1)])],
                vec![ids(&[(2, 1)]), ids(&[(1, 1), (2, 1)])],
            ],
            actions: [
                vec![ids(&[]), ids(&[(1, 1), (2, 1)])],
                vec![ids(&[]), ids(&[(1, 1), (2, 1)])],
            ],
        },
    }
}

/// A randomly parameterized game with one-step delayed sharing of
/// observations and full action sharing, for property tests. Each controller
/// sees its own channel immediately and the other's one step later, so the
/// private information at stage `t` is exactly the fresh own observation and
/// the structural assumptions hold by construction. Magnitudes are kept mild
/// so that the existence conditions hold for typical seeds.
pub fn random_nested_spec(seed: u64) -> GameSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = 2 + (rng.gen_range(0..3) as usize);
    let n_x = 1 + rng.gen_range(0..2) as usize;
    let n_u = [1 + rng.gen_range(0..2) as usize, 1 + rng.gen_range(0..2) as usize];
    let n_y = [1 + rng.gen_range(0..2) as usize, 1 + rng.gen_range(0..2) as usize];

    let mut dynamics = Vec::new();
    for _ in 1..horizon {
        dynamics.push(StageDynamics {
            a: rand_mat(&mut rng, n_x, n_x, 0.5),
            b1: rand_mat(&mut rng, n_x, n_u[0], 0.7),
            b2: rand_mat(&mut rng, n_x, n_u[1], 0.7),
            noise_cov: rand_psd(&mut rng, n_x, 0.8),
        });
    }

    let mut observations = Vec::new();
    for i in 0..2 {
        let channels = (1..=horizon)
            .map(|_| ObservationChannel {
                h: rand_mat(&mut rng, n_y[i], n_x, 1.0),
                noise_cov: rand_psd(&mut rng, n_y[i], 0.8),
            })
            .collect::<Vec<_>>();
        observations.push(channels);
    }
    let observations = <[Vec<ObservationChannel>; 2]>::try_from(observations).unwrap();

    let mut costs = Vec::new();
    for i in 0..2 {
        let dim = n_x + n_u[0] + n_u[1];
        let stage = (1..horizon)
            .map(|_| {
                // diagonal-heavy PSD cost with a strictly convex own-action block
                let mut r = rand_psd(&mut rng, dim, 0.3);
                let offset = if i == 0 { n_x } else { n_x + n_u[0] };
                for k in 0..n_u[i] {
                    r[(offset + k, offset + k)] += 1.0;
                }
                r
            })
            .collect();
        costs.push(CostSpec { stage, terminal: rand_psd(&mut rng, n_x, 0.5) });
    }
    let costs = <[CostSpec; 2]>::try_from(costs).unwrap();

    let delayed_obs = |i: u8, t: usize| {
        let mut pairs: Vec<(u8, usize)> = (1..=t).map(|s| (i, s)).collect();
        let other = 3 - i;
        pairs.extend((1..t).map(|s| (other, s)));
        ids(&pairs)
    };
    let shared_act = |t: usize| {
        let mut pairs = Vec::new();
        for s in 1..t {
            pairs.push((1u8, s));
            pairs.push((2u8, s));
        }
        ids(&pairs)
    };

    GameSpec {
        horizon,
        state_dims: vec![n_x; horizon],
        action_dims: [vec![n_u[0]; horizon - 1], vec![n_u[1]; horizon - 1]],
        observation_dims: [vec![n_y[0]; horizon], vec![n_y[1]; horizon]],
        initial_state_cov: rand_psd(&mut rng, n_x, 1.0),
        dynamics,
        observations,
        costs,
        info: InfoStructure {
            observations: [
                (1..=horizon).map(|t| delayed_obs(1, t)).collect(),
                (1..=horizon).map(|t| delayed_obs(2, t)).collect(),
            ],
            actions: [
                (1..=horizon).map(shared_act).collect(),
                (1..=horizon).map(shared_act).collect(),
            ],
        },
    }
}

/// Random static game instance with a guaranteed best-response contraction.
///
/// The observation maps enter exactly (`Y^i = H^i X`), so all channel noise
/// lives inside the state covariance; cost matrices are random PSD with
/// strictly convex own-action blocks. When the drawn coupling is too strong
/// for the contraction condition, the action cross blocks of both cost
/// matrices are damped (by averaging with a sign-flipped congruence, which
/// preserves semidefiniteness) until it holds.
pub fn random_stage_game(seed: u64, n_x: usize, n_u: [usize; 2], n_y: [usize; 2]) -> StageGameData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_dim = n_x + n_u[0] + n_u[1];

    let sigma_xx = rand_psd(&mut rng, n_x, 1.0);
    let h = [rand_mat(&mut rng, n_y[0], n_x, 1.0), rand_mat(&mut rng, n_y[1], n_x, 1.0)];
    let sigma = joint_covariance(&sigma_xx, &h[0], &h[1]);

    let mut quad = [rand_psd(&mut rng, v_dim, 0.6), rand_psd(&mut rng, v_dim, 0.6)];
    for i in 0..2 {
        let offset = if i == 0 { n_x } else { n_x + n_u[0] };
        for k in 0..n_u[i] {
            quad[i][(offset + k, offset + k)] += 1.0 + rng.gen::<f64>();
        }
    }
    let lin = [
        Vector::from_fn(v_dim, |_, _| rng.gen::<f64>() - 0.5),
        Vector::from_fn(v_dim, |_, _| rng.gen::<f64>() - 0.5),
    ];
    let coup = [rand_mat(&mut rng, n_x, v_dim, 0.4), rand_mat(&mut rng, n_x, v_dim, 0.4)];
    let quad_mean = [rand_psd(&mut rng, n_x, 0.5), rand_psd(&mut rng, n_x, 0.5)];
    let lin_mean = [rand_mat(&mut rng, 1, n_x, 0.5), rand_mat(&mut rng, 1, n_x, 0.5)];
    let constant = [rng.gen::<f64>(), rng.gen::<f64>()];
    let mean = Vector::from_fn(n_x, |_, _| rng.gen::<f64>() - 0.5);

    let mut flip = Matrix::identity(v_dim, v_dim);
    for k in 0..n_u[1] {
        flip[(n_x + n_u[0] + k, n_x + n_u[0] + k)] = -1.0;
    }
    loop {
        let data = StageGameData {
            c: quad[0].clone(),
            e: quad[1].clone(),
            lin: lin.clone(),
            coup: coup.clone(),
            quad_mean: quad_mean.clone(),
            lin_mean: lin_mean.clone(),
            constant,
            sigma: sigma.clone(),
            h: h.clone(),
            mean: mean.clone(),
            n_x,
            n_u,
            n_y,
        };
        data.validate().expect("generated instance is structurally valid");
        let report = check_existence_conditions(&data).expect("generated instance is solvable");
        if report.contraction && report.rho_k1 < 0.9 {
            return data;
        }
        for q in quad.iter_mut() {
            *q = 0.5 * (&*q + &flip * &*q * &flip);
        }
    }
}
