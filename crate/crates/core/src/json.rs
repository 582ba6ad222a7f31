//! JSON encoding of game descriptions.
//!
//! A game is a single UTF-8 JSON object with five keys:
//!
//! - `horizon`: integer `T >= 2`;
//! - `initial_state_cov`: matrix, covariance of `X_1`;
//! - `stages`: array of length `T`. Every entry carries `n_x`, `n_y1`, `n_y2`,
//!   the observation maps `h1`, `h2` and noise covariances `obs_noise1`,
//!   `obs_noise2`. All entries except the last additionally carry `n_u1`,
//!   `n_u2`, the transition matrices `a`, `b1`, `b2` and the process noise
//!   covariance `process_noise`; the last stage has no action and no
//!   transition, and listing those fields there is an error.
//! - `costs`: object with `controller1` and `controller2`, each holding
//!   `stage` (array of `T - 1` symmetric matrices over the stacked
//!   `(x, u1, u2)`) and `terminal` (symmetric matrix over `x_T`);
//! - `info`: object with `obs1`, `obs2`, `act1`, `act2`. Each is an array of
//!   length `T` whose entry for stage `t` lists `[controller, stage]` pairs:
//!   the observation components (`obs*`) and remembered action components
//!   (`act*`) available to that controller when acting at stage `t`.
//!
//! Matrices are objects `{"rows": r, "cols": c, "data": [..]}` with `data` in
//! row-major order. Non-finite entries are rejected on input; output uses
//! shortest round-trip float formatting, so parsing the emitted document
//! reproduces every entry bit for bit. Unknown fields anywhere are errors.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::model::{
    ComponentId, CostSpec, GameSpec, InfoStructure, ModelError, ObservationChannel, StageDynamics,
};

/// Row-major matrix encoding used in every document this tool reads or
/// writes: explicit dimensions plus a flat `data` array.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixDoc {
    fn from(m: &Matrix) -> Self {
        matrix_to_doc(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    n_x: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_u1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_u2: Option<usize>,
    n_y1: usize,
    n_y2: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<MatrixDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b1: Option<MatrixDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b2: Option<MatrixDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    process_noise: Option<MatrixDoc>,
    h1: MatrixDoc,
    h2: MatrixDoc,
    obs_noise1: MatrixDoc,
    obs_noise2: MatrixDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostDoc {
    stage: Vec<MatrixDoc>,
    terminal: MatrixDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostsDoc {
    controller1: CostDoc,
    controller2: CostDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InfoDoc {
    obs1: Vec<Vec<(u8, usize)>>,
    obs2: Vec<Vec<(u8, usize)>>,
    act1: Vec<Vec<(u8, usize)>>,
    act2: Vec<Vec<(u8, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDocument {
    horizon: usize,
    initial_state_cov: MatrixDoc,
    stages: Vec<StageDoc>,
    costs: CostsDoc,
    info: InfoDoc,
}

// ---- document -> model -----------------------------------------------------------

fn matrix_from_doc(doc: &MatrixDoc, location: &str) -> Result<Matrix, ModelError> {
    if doc.data.len() != doc.rows * doc.cols {
        return Err(ModelError::LengthMismatch {
            location: format!("{location}.data"),
            expected: doc.rows * doc.cols,
            found: doc.data.len(),
        });
    }
    if doc.data.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { location: location.to_string() });
    }
    Ok(Matrix::from_row_slice(doc.rows, doc.cols, &doc.data))
}

fn require<'a, T>(field: &'a Option<T>, location: String) -> Result<&'a T, ModelError> {
    field.as_ref().ok_or(ModelError::MissingField { location })
}

fn forbid<T>(field: &Option<T>, location: String) -> Result<(), ModelError> {
    if field.is_some() {
        return Err(ModelError::UnexpectedField { location });
    }
    Ok(())
}

fn sets_from_doc(
    doc: &[Vec<(u8, usize)>],
    horizon: usize,
    location: &str,
) -> Result<Vec<std::collections::BTreeSet<ComponentId>>, ModelError> {
    if doc.len() != horizon {
        return Err(ModelError::LengthMismatch {
            location: location.to_string(),
            expected: horizon,
            found: doc.len(),
        });
    }
    Ok(doc
        .iter()
        .map(|entries| {
            entries.iter().map(|&(controller, stage)| ComponentId { controller, stage }).collect()
        })
        .collect())
}

/// Parses a game description from its JSON text.
pub fn spec_from_json(text: &str) -> Result<GameSpec, ModelError> {
    let doc: SpecDocument = serde_json::from_str(text)?;
    let horizon = doc.horizon;
    if doc.stages.len() != horizon {
        return Err(ModelError::LengthMismatch {
            location: "stages".to_string(),
            expected: horizon,
            found: doc.stages.len(),
        });
    }

    let mut state_dims = Vec::with_capacity(horizon);
    let mut action_dims: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut observation_dims: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut dynamics = Vec::new();
    let mut observations: [Vec<ObservationChannel>; 2] = [Vec::new(), Vec::new()];

    for (idx, stage) in doc.stages.iter().enumerate() {
        let at = |field: &str| format!("stages[{idx}].{field}");
        state_dims.push(stage.n_x);
        observation_dims[0].push(stage.n_y1);
        observation_dims[1].push(stage.n_y2);
        observations[0].push(ObservationChannel {
            h: matrix_from_doc(&stage.h1, &at("h1"))?,
            noise_cov: matrix_from_doc(&stage.obs_noise1, &at("obs_noise1"))?,
        });
        observations[1].push(ObservationChannel {
            h: matrix_from_doc(&stage.h2, &at("h2"))?,
            noise_cov: matrix_from_doc(&stage.obs_noise2, &at("obs_noise2"))?,
        });
        if idx + 1 < horizon {
            action_dims[0].push(*require(&stage.n_u1, at("n_u1"))?);
            action_dims[1].push(*require(&stage.n_u2, at("n_u2"))?);
            dynamics.push(StageDynamics {
                a: matrix_from_doc(require(&stage.a, at("a"))?, &at("a"))?,
                b1: matrix_from_doc(require(&stage.b1, at("b1"))?, &at("b1"))?,
                b2: matrix_from_doc(require(&stage.b2, at("b2"))?, &at("b2"))?,
                noise_cov: matrix_from_doc(
                    require(&stage.process_noise, at("process_noise"))?,
                    &at("process_noise"),
                )?,
            });
        } else {
            forbid(&stage.n_u1, at("n_u1"))?;
            forbid(&stage.n_u2, at("n_u2"))?;
            forbid(&stage.a, at("a"))?;
            forbid(&stage.b1, at("b1"))?;
            forbid(&stage.b2, at("b2"))?;
            forbid(&stage.process_noise, at("process_noise"))?;
        }
    }

    let cost_from_doc = |doc: &CostDoc, name: &str| -> Result<CostSpec, ModelError> {
        let mut stage = Vec::with_capacity(doc.stage.len());
        for (idx, m) in doc.stage.iter().enumerate() {
            stage.push(matrix_from_doc(m, &format!("costs.{name}.stage[{idx}]"))?);
        }
        Ok(CostSpec { stage, terminal: matrix_from_doc(&doc.terminal, &format!("costs.{name}.terminal"))? })
    };

    Ok(GameSpec {
        horizon,
        state_dims,
        action_dims,
        observation_dims,
        initial_state_cov: matrix_from_doc(&doc.initial_state_cov, "initial_state_cov")?,
        dynamics,
        observations,
        costs: [
            cost_from_doc(&doc.costs.controller1, "controller1")?,
            cost_from_doc(&doc.costs.controller2, "controller2")?,
        ],
        info: InfoStructure {
            observations: [
                sets_from_doc(&doc.info.obs1, horizon, "info.obs1")?,
                sets_from_doc(&doc.info.obs2, horizon, "info.obs2")?,
            ],
            actions: [
                sets_from_doc(&doc.info.act1, horizon, "info.act1")?,
                sets_from_doc(&doc.info.act2, horizon, "info.act2")?,
            ],
        },
    })
}

// ---- model -> document -----------------------------------------------------------

fn matrix_to_doc(m: &Matrix) -> MatrixDoc {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    MatrixDoc { rows: m.nrows(), cols: m.ncols(), data }
}

fn sets_to_doc(sets: &[std::collections::BTreeSet<ComponentId>]) -> Vec<Vec<(u8, usize)>> {
    sets.iter()
        .map(|set| set.iter().map(|id| (id.controller, id.stage)).collect())
        .collect()
}

/// Renders a game description as pretty-printed JSON. The output parses back
/// to an identical game.
pub fn spec_to_json(spec: &GameSpec) -> String {
    let stages = (0..spec.horizon)
        .map(|idx| {
            let acting = idx + 1 < spec.horizon;
            StageDoc {
                n_x: spec.state_dims[idx],
                n_u1: acting.then(|| spec.action_dims[0][idx]),
                n_u2: acting.then(|| spec.action_dims[1][idx]),
                n_y1: spec.observation_dims[0][idx],
                n_y2: spec.observation_dims[1][idx],
                a: acting.then(|| matrix_to_doc(&spec.dynamics[idx].a)),
                b1: acting.then(|| matrix_to_doc(&spec.dynamics[idx].b1)),
                b2: acting.then(|| matrix_to_doc(&spec.dynamics[idx].b2)),
                process_noise: acting.then(|| matrix_to_doc(&spec.dynamics[idx].noise_cov)),
                h1: matrix_to_doc(&spec.observations[0][idx].h),
                h2: matrix_to_doc(&spec.observations[1][idx].h),
                obs_noise1: matrix_to_doc(&spec.observations[0][idx].noise_cov),
                obs_noise2: matrix_to_doc(&spec.observations[1][idx].noise_cov),
            }
        })
        .collect();
    let cost_to_doc = |cost: &CostSpec| CostDoc {
        stage: cost.stage.iter().map(matrix_to_doc).collect(),
        terminal: matrix_to_doc(&cost.terminal),
    };
    let doc = SpecDocument {
        horizon: spec.horizon,
        initial_state_cov: matrix_to_doc(&spec.initial_state_cov),
        stages,
        costs: CostsDoc {
            controller1: cost_to_doc(&spec.costs[0]),
            controller2: cost_to_doc(&spec.costs[1]),
        },
        info: InfoDoc {
            obs1: sets_to_doc(&spec.info.observations[0]),
            obs2: sets_to_doc(&spec.info.observations[1]),
            act1: sets_to_doc(&spec.info.actions[0]),
            act2: sets_to_doc(&spec.info.actions[1]),
        },
    };
    serde_json::to_string_pretty(&doc).expect("game documents serialize without error")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::model::{validate_spec, ValidateOptions};

    fn assert_round_trip(spec: &GameSpec) {
        let text = spec_to_json(spec);
        let back = spec_from_json(&text).unwrap();
        assert_eq!(back.horizon, spec.horizon);
        assert_eq!(back.state_dims, spec.state_dims);
        assert_eq!(back.action_dims, spec.action_dims);
        assert_eq!(back.observation_dims, spec.observation_dims);
        assert_eq!(back.initial_state_cov, spec.initial_state_cov);
        for (a, b) in back.dynamics.iter().zip(&spec.dynamics) {
            assert_eq!(a.a, b.a);
            assert_eq!(a.b1, b.b1);
            assert_eq!(a.b2, b.b2);
            assert_eq!(a.noise_cov, b.noise_cov);
        }
        for i in 0..2 {
            for (a, b) in back.observations[i].iter().zip(&spec.observations[i]) {
                assert_eq!(a.h, b.h);
                assert_eq!(a.noise_cov, b.noise_cov);
            }
            assert_eq!(back.costs[i].stage, spec.costs[i].stage);
            assert_eq!(back.costs[i].terminal, spec.costs[i].terminal);
            assert_eq!(back.info.observations[i], spec.info.observations[i]);
            assert_eq!(back.info.actions[i], spec.info.actions[i]);
        }
    }

    #[test]
    fn bundled_game_round_trips_exactly() {
        assert_round_trip(&examples::two_channel_spec());
    }

    #[test]
    fn multidimensional_game_round_trips_exactly() {
        let spec = examples::global_local_spec(3);
        assert_round_trip(&spec);
        let back = spec_from_json(&spec_to_json(&spec)).unwrap();
        assert!(validate_spec(&back, ValidateOptions::default()).unwrap().passed());
    }

    #[test]
    fn random_games_round_trip_exactly() {
        for seed in 0..5 {
            assert_round_trip(&examples::random_nested_spec(seed));
        }
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(matches!(spec_from_json("not json").unwrap_err(), ModelError::Json(_)));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&spec_to_json(&examples::two_channel_spec())).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(matches!(
            spec_from_json(&value.to_string()).unwrap_err(),
            ModelError::Json(_)
        ));
    }

    #[test]
    fn wrong_data_length_is_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&spec_to_json(&examples::two_channel_spec())).unwrap();
        value["initial_state_cov"]["data"] = serde_json::json!([1.0, 2.0, 3.0]);
        assert!(matches!(
            spec_from_json(&value.to_string()).unwrap_err(),
            ModelError::LengthMismatch { .. }
        ));
    }

    #[test]
    fn missing_transition_is_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&spec_to_json(&examples::two_channel_spec())).unwrap();
        value["stages"][0].as_object_mut().unwrap().remove("a");
        assert!(matches!(
            spec_from_json(&value.to_string()).unwrap_err(),
            ModelError::MissingField { .. }
        ));
    }

    #[test]
    fn transition_on_last_stage_is_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&spec_to_json(&examples::two_channel_spec())).unwrap();
        let last = value["stages"].as_array().unwrap().len() - 1;
        value["stages"][last]["n_u1"] = serde_json::json!(1);
        assert!(matches!(
            spec_from_json(&value.to_string()).unwrap_err(),
            ModelError::UnexpectedField { .. }
        ));
    }

    #[test]
    fn overflowing_floats_are_rejected() {
        let mut text = spec_to_json(&examples::two_channel_spec());
        text = text.replacen("1.0", "1e999", 1);
        assert!(spec_from_json(&text).is_err());
    }

    #[test]
    fn parsed_bundled_game_solves_to_same_equilibrium() {
        use crate::induction::{solve_cimpe, SolveOptions};
        let spec = examples::two_channel_spec();
        let parsed = spec_from_json(&spec_to_json(&spec)).unwrap();
        let a = solve_cimpe(&spec, &SolveOptions::default()).unwrap();
        let b = solve_cimpe(&parsed, &SolveOptions::default()).unwrap();
        for i in 0..2 {
            assert_eq!(a.expected_costs[i].to_bits(), b.expected_costs[i].to_bits());
        }
    }
}
