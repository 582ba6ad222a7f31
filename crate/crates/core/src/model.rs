//! Game description: dynamics, observations, costs and the information
//! structure, together with structural validation.
//!
//! The model is a two-controller, finite-horizon, linear-Gaussian dynamic
//! game. Over stages `t = 1..T` the state evolves as
//!
//! ```text
//! X_{t+1} = A_t X_t + B1_t U1_t + B2_t U2_t + W0_t,     t = 1..T-1
//! Yi_t    = Hi_t X_t + Wi_t,                            t = 1..T, i = 1, 2
//! ```
//!
//! with independent zero-mean Gaussian primitives. Stage costs are quadratic
//! forms over `(x, u1, u2)` and the terminal cost is a quadratic form in
//! `x_T`. Who knows what is described by index sets per controller and stage:
//! `observations[i][t]` lists the observation components `(j, s)` (channel of
//! controller `j`, made at stage `s`) available to controller `i+1` when
//! acting at stage `t`, and `actions[i][t]` lists the action components
//! `(j, s)` it remembers. Everything both controllers share is common
//! information; the rest is private.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::linalg::{min_symmetric_eigenvalue, Matrix};

/// PSD tolerance used by structural validation of input covariances/costs.
pub const VALIDATION_PSD_TOLERANCE: f64 = 1e-9;

/// Identifies one observation or action component: `controller` is 1 or 2,
/// `stage` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId {
    pub controller: u8,
    pub stage: usize,
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.controller, self.stage)
    }
}

/// State dynamics for one transition `t -> t+1`.
#[derive(Debug, Clone)]
pub struct StageDynamics {
    pub a: Matrix,
    pub b1: Matrix,
    pub b2: Matrix,
    /// Covariance of the additive state noise `W0_t`.
    pub noise_cov: Matrix,
}

/// One controller's observation channel at one stage.
#[derive(Debug, Clone)]
pub struct ObservationChannel {
    pub h: Matrix,
    /// Covariance of the additive observation noise.
    pub noise_cov: Matrix,
}

/// Quadratic costs for one controller: per-stage symmetric matrices over the
/// stacked `(x_t, u1_t, u2_t)` and a terminal matrix over `x_T`. The cost is
/// the plain quadratic form `v^T R v` (cross blocks therefore enter twice).
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub stage: Vec<Matrix>,
    pub terminal: Matrix,
}

/// Information index sets. Outer index: controller (0 -> controller 1).
/// Inner: stage `t = 1..T` (0-based index `t-1`).
#[derive(Debug, Clone, Default)]
pub struct InfoStructure {
    pub observations: [Vec<BTreeSet<ComponentId>>; 2],
    pub actions: [Vec<BTreeSet<ComponentId>>; 2],
}

/// A complete game description with consistent dimensions.
#[derive(Debug, Clone)]
pub struct GameSpec {
    /// Number of stages `T >= 2`; actions happen at `t = 1..T-1`.
    pub horizon: usize,
    /// `n_x(t)` for `t = 1..T`.
    pub state_dims: Vec<usize>,
    /// `n_ui(t)` for `t = 1..T-1`, per controller.
    pub action_dims: [Vec<usize>; 2],
    /// `n_yi(t)` for `t = 1..T`, per controller.
    pub observation_dims: [Vec<usize>; 2],
    pub initial_state_cov: Matrix,
    pub dynamics: Vec<StageDynamics>,
    pub observations: [Vec<ObservationChannel>; 2],
    pub costs: [CostSpec; 2],
    pub info: InfoStructure,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("horizon must be at least 2, got {0}")]
    HorizonTooShort(usize),
    #[error("{location}: expected length {expected}, got {found}")]
    LengthMismatch { location: String, expected: usize, found: usize },
    #[error("{location}: expected a {expected_rows}x{expected_cols} matrix, got {rows}x{cols}")]
    MatrixShape {
        location: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{location}: ragged matrix rows")]
    RaggedMatrix { location: String },
    #[error("{location}: non-finite entry")]
    NonFinite { location: String },
    #[error("{location}: controller index must be 1 or 2, got {found}")]
    BadController { location: String, found: u8 },
    #[error("{location}: component {component} is outside the valid stage range {bound}")]
    ComponentOutOfRange { location: String, component: ComponentId, bound: String },
    #[error("{location}: missing required field")]
    MissingField { location: String },
    #[error("{location}: field not allowed here")]
    UnexpectedField { location: String },
    #[error("failed to parse spec JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(
        "information increment {component} entering the common information at stage {stage} \
         cannot be produced from private information, current actions and fresh observations"
    )]
    IncrementNotRepresentable { component: ComponentId, stage: usize },
    #[error(
        "private information {component} of controller {controller} at stage {stage} cannot be \
         produced from its previous private information, own action and fresh observation"
    )]
    PrivateNotRepresentable { component: ComponentId, controller: u8, stage: usize },
    #[error("common information at stage {stage} is not nested in stage {next}: {component} is dropped")]
    CommonNotNested { component: ComponentId, stage: usize, next: usize },
}

impl GameSpec {
    pub fn n_x(&self, t: usize) -> usize {
        self.state_dims[t - 1]
    }

    pub fn n_u(&self, controller: u8, t: usize) -> usize {
        self.action_dims[controller as usize - 1][t - 1]
    }

    pub fn n_y(&self, controller: u8, t: usize) -> usize {
        self.observation_dims[controller as usize - 1][t - 1]
    }

    /// Dimension of the stacked `(x_t, u1_t, u2_t)` cost variable at stage t.
    pub fn stage_cost_dim(&self, t: usize) -> usize {
        self.n_x(t) + self.n_u(1, t) + self.n_u(2, t)
    }

    /// Checks all container lengths and matrix shapes against the declared
    /// dimensions, and that every entry is finite. This is the hard gate every
    /// constructor goes through; semantic checks live in [`validate_spec`].
    pub fn check_dimensions(&self) -> Result<(), ModelError> {
        let t_max = self.horizon;
        if t_max < 2 {
            return Err(ModelError::HorizonTooShort(t_max));
        }
        expect_len("state_dims", self.state_dims.len(), t_max)?;
        for (i, dims) in self.action_dims.iter().enumerate() {
            expect_len(&format!("action_dims[{}]", i + 1), dims.len(), t_max - 1)?;
        }
        for (i, dims) in self.observation_dims.iter().enumerate() {
            expect_len(&format!("observation_dims[{}]", i + 1), dims.len(), t_max)?;
        }
        expect_shape(
            "initial_state_cov",
            &self.initial_state_cov,
            self.state_dims[0],
            self.state_dims[0],
        )?;
        expect_len("dynamics", self.dynamics.len(), t_max - 1)?;
        for t in 1..t_max {
            let d = &self.dynamics[t - 1];
            let loc = |name: &str| format!("dynamics[t={t}].{name}");
            expect_shape(&loc("a"), &d.a, self.n_x(t + 1), self.n_x(t))?;
            expect_shape(&loc("b1"), &d.b1, self.n_x(t + 1), self.n_u(1, t))?;
            expect_shape(&loc("b2"), &d.b2, self.n_x(t + 1), self.n_u(2, t))?;
            expect_shape(&loc("noise_cov"), &d.noise_cov, self.n_x(t + 1), self.n_x(t + 1))?;
        }
        for i in [1u8, 2] {
            let channels = &self.observations[i as usize - 1];
            expect_len(&format!("observations[{i}]"), channels.len(), t_max)?;
            for t in 1..=t_max {
                let ch = &channels[t - 1];
                let loc = |name: &str| format!("observations[{i}][t={t}].{name}");
                expect_shape(&loc("h"), &ch.h, self.n_y(i, t), self.n_x(t))?;
                expect_shape(&loc("noise_cov"), &ch.noise_cov, self.n_y(i, t), self.n_y(i, t))?;
            }
            let cost = &self.costs[i as usize - 1];
            expect_len(&format!("costs[{i}].stage"), cost.stage.len(), t_max - 1)?;
            for t in 1..t_max {
                let dim = self.stage_cost_dim(t);
                expect_shape(&format!("costs[{i}].stage[t={t}]"), &cost.stage[t - 1], dim, dim)?;
            }
            expect_shape(
                &format!("costs[{i}].terminal"),
                &cost.terminal,
                self.n_x(t_max),
                self.n_x(t_max),
            )?;
            for (kind, sets) in [
                ("observations", &self.info.observations[i as usize - 1]),
                ("actions", &self.info.actions[i as usize - 1]),
            ] {
                expect_len(&format!("info.{kind}[{i}]"), sets.len(), t_max)?;
                for t in 1..=t_max {
                    for id in &sets[t - 1] {
                        let location = format!("info.{kind}[{i}][t={t}]");
                        if id.controller != 1 && id.controller != 2 {
                            return Err(ModelError::BadController {
                                location,
                                found: id.controller,
                            });
                        }
                        // Observations made at stage s exist for s <= t; actions
                        // are taken at s <= t-1 (and never at stage T).
                        let bound = if kind == "observations" { t } else { t - 1 };
                        if id.stage == 0 || id.stage > bound {
                            return Err(ModelError::ComponentOutOfRange {
                                location,
                                component: *id,
                                bound: format!("1..={bound}"),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn expect_len(location: &str, found: usize, expected: usize) -> Result<(), ModelError> {
    if found != expected {
        return Err(ModelError::LengthMismatch { location: location.into(), expected, found });
    }
    Ok(())
}

fn expect_shape(
    location: &str,
    m: &Matrix,
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ModelError::MatrixShape {
            location: location.into(),
            expected_rows: rows,
            expected_cols: cols,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { location: location.into() });
    }
    Ok(())
}

// ---- validation ---------------------------------------------------------------

/// One structural check with a human-readable outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_spec`]: every check is listed, passed or not.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(ValidationCheck { name: name.into(), passed, detail: detail.into() });
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    /// Require each controller to remember its own past observations and
    /// actions. On by default.
    pub check_perfect_recall: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { check_perfect_recall: true }
    }
}

/// Runs the semantic checks: symmetry/PSD-ness of covariances and costs,
/// positive definiteness of own-action cost blocks, monotonicity of the
/// common information, perfect recall (optional) and representability of the
/// information increments. Dimension errors are hard failures; everything
/// else becomes a pass/fail line in the report.
pub fn validate_spec(
    spec: &GameSpec,
    options: ValidateOptions,
) -> Result<ValidationReport, ModelError> {
    spec.check_dimensions()?;
    let mut report = ValidationReport::default();
    let t_max = spec.horizon;

    check_psd(&mut report, "initial_state_cov", &spec.initial_state_cov);
    for t in 1..t_max {
        check_psd(&mut report, &format!("dynamics[t={t}].noise_cov"), &spec.dynamics[t - 1].noise_cov);
    }
    for i in [1u8, 2] {
        for t in 1..=t_max {
            check_psd(
                &mut report,
                &format!("observations[{i}][t={t}].noise_cov"),
                &spec.observations[i as usize - 1][t - 1].noise_cov,
            );
        }
    }

    for i in [1u8, 2] {
        let cost = &spec.costs[i as usize - 1];
        for t in 1..t_max {
            let name = format!("costs[{i}].stage[t={t}]");
            let r = &cost.stage[t - 1];
            check_symmetric(&mut report, &name, r);
            check_psd(&mut report, &name, r);
            // The controller's own action block must be positive definite for
            // its stage problem to be strictly convex.
            let nx = spec.n_x(t);
            let nu1 = spec.n_u(1, t);
            let nu = spec.n_u(i, t);
            let offset = if i == 1 { nx } else { nx + nu1 };
            let own = r.view((offset, offset), (nu, nu)).into_owned();
            let min_eig = min_symmetric_eigenvalue(&own);
            report.push(
                format!("{name}: own-action block positive definite"),
                nu == 0 || min_eig > 0.0,
                format!("min eigenvalue {min_eig:.3e}"),
            );
        }
        check_symmetric(&mut report, &format!("costs[{i}].terminal"), &cost.terminal);
        check_psd(&mut report, &format!("costs[{i}].terminal"), &cost.terminal);
    }

    // Common information must be nested: whatever is common at t stays common.
    let common = common_sets(spec);
    let mut nested = true;
    let mut nested_detail = String::from("common information grows monotonically");
    'outer: for t in 1..t_max {
        for kind in [0, 1] {
            for id in &common[t - 1][kind] {
                if !common[t][kind].contains(id) {
                    nested = false;
                    nested_detail = format!(
                        "component {id} is common at stage {t} but not at stage {}",
                        t + 1
                    );
                    break 'outer;
                }
            }
        }
    }
    report.push("common information nested", nested, nested_detail);

    if options.check_perfect_recall {
        let (ok, detail) = perfect_recall(spec);
        report.push("perfect recall", ok, detail);
    }

    // Increment representability: delegate to the information-map builder and
    // convert a construction failure into a failed check.
    match crate::info::build_info_maps(spec) {
        Ok(_) => report.push(
            "information increments representable",
            true,
            "new common information and private updates factor through local signals",
        ),
        Err(e) => report.push("information increments representable", false, e.to_string()),
    }

    Ok(report)
}

fn check_symmetric(report: &mut ValidationReport, name: &str, m: &Matrix) {
    let defect = (m - m.transpose()).norm();
    let scale = 1.0 + m.norm();
    report.push(
        format!("{name}: symmetric"),
        defect <= 1e-12 * scale,
        format!("asymmetry {defect:.3e}"),
    );
}

fn check_psd(report: &mut ValidationReport, name: &str, m: &Matrix) {
    let min_eig = min_symmetric_eigenvalue(m);
    let sym_defect = (m - m.transpose()).norm();
    let ok = sym_defect <= 1e-12 * (1.0 + m.norm())
        && (m.nrows() == 0 || min_eig >= -VALIDATION_PSD_TOLERANCE * (1.0 + m.norm()));
    let detail = if m.nrows() == 0 {
        "empty".to_string()
    } else {
        format!("min eigenvalue {min_eig:.3e}, asymmetry {sym_defect:.3e}")
    };
    report.push(format!("{name}: positive semidefinite"), ok, detail);
}

/// Per stage: `[observation components, action components]` known to both.
pub(crate) fn common_sets(spec: &GameSpec) -> Vec<[BTreeSet<ComponentId>; 2]> {
    (1..=spec.horizon)
        .map(|t| {
            let obs: BTreeSet<_> = spec.info.observations[0][t - 1]
                .intersection(&spec.info.observations[1][t - 1])
                .cloned()
                .collect();
            let act: BTreeSet<_> = spec.info.actions[0][t - 1]
                .intersection(&spec.info.actions[1][t - 1])
                .cloned()
                .collect();
            [obs, act]
        })
        .collect()
}

fn perfect_recall(spec: &GameSpec) -> (bool, String) {
    for i in [1u8, 2] {
        let obs = &spec.info.observations[i as usize - 1];
        let act = &spec.info.actions[i as usize - 1];
        for t in 1..=spec.horizon {
            for s in 1..=t {
                if spec.n_y(i, s) > 0 && !obs[t - 1].contains(&ComponentId { controller: i, stage: s }) {
                    return (
                        false,
                        format!("controller {i} forgets its own observation from stage {s} at stage {t}"),
                    );
                }
            }
            for s in 1..t {
                if spec.n_u(i, s) > 0
                    && !act[t - 1].contains(&ComponentId { controller: i, stage: s })
                {
                    return (
                        false,
                        format!("controller {i} forgets its own action from stage {s} at stage {t}"),
                    );
                }
            }
            if t + 1 <= spec.horizon {
                let next_obs = &obs[t];
                let next_act = &act[t];
                if let Some(id) = obs[t - 1].iter().find(|id| !next_obs.contains(id)) {
                    return (false, format!("controller {i} drops observation {id} after stage {t}"));
                }
                if let Some(id) = act[t - 1].iter().find(|id| !next_act.contains(id)) {
                    return (false, format!("controller {i} drops action {id} after stage {t}"));
                }
            }
        }
    }
    (true, "own history is retained and information never shrinks".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;

    #[test]
    fn bundled_spec_passes_validation() {
        let spec = examples::two_channel_spec();
        let report = validate_spec(&spec, ValidateOptions::default()).unwrap();
        assert!(report.passed(), "failures: {:?}", report.failures().collect::<Vec<_>>());
    }

    #[test]
    fn dimension_errors_are_hard() {
        let mut spec = examples::two_channel_spec();
        spec.dynamics[0].a = Matrix::zeros(2, 2);
        assert!(matches!(
            validate_spec(&spec, ValidateOptions::default()),
            Err(ModelError::MatrixShape { .. })
        ));
    }

    #[test]
    fn non_finite_entries_are_hard_errors() {
        let mut spec = examples::two_channel_spec();
        spec.initial_state_cov[(0, 0)] = f64::NAN;
        assert!(matches!(
            validate_spec(&spec, ValidateOptions::default()),
            Err(ModelError::NonFinite { .. })
        ));
    }

    #[test]
    fn indefinite_cost_is_reported_not_fatal() {
        let mut spec = examples::two_channel_spec();
        let dim = spec.stage_cost_dim(1);
        spec.costs[0].stage[0] = -Matrix::identity(dim, dim);
        let report = validate_spec(&spec, ValidateOptions::default()).unwrap();
        assert!(!report.passed());
        assert!(report
            .failures()
            .any(|c| c.name.contains("costs[1].stage[t=1]") && c.name.contains("semidefinite")));
    }

    #[test]
    fn forgetting_own_observation_fails_perfect_recall() {
        let mut spec = examples::two_channel_spec();
        // Controller 1 drops its stage-1 observation at stage 3.
        spec.info.observations[0][2].remove(&ComponentId { controller: 1, stage: 1 });
        let report = validate_spec(&spec, ValidateOptions::default()).unwrap();
        assert!(report.failures().any(|c| c.name == "perfect recall"));
        // The same spec passes with the recall check disabled, but nestedness
        // of the common information then fails instead.
        let relaxed = validate_spec(&spec, ValidateOptions { check_perfect_recall: false }).unwrap();
        assert!(relaxed.failures().any(|c| c.name == "common information nested"));
    }

    #[test]
    fn out_of_range_component_rejected() {
        let mut spec = examples::two_channel_spec();
        spec.info.observations[0][0].insert(ComponentId { controller: 1, stage: 2 });
        assert!(matches!(
            validate_spec(&spec, ValidateOptions::default()),
            Err(ModelError::ComponentOutOfRange { .. })
        ));
    }
}
