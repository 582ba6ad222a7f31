//! Derived information structure: common/private splits, per-stage common
//! increments and the selection maps that express them through local signals.
//!
//! At each stage the common information `C_t` is what both controllers know;
//! controller i's private information `P^i_t` is the rest of its history. The
//! solver needs three structural facts, all computed here:
//!
//! * the increment `Z_{t+1} = C_{t+1} \ C_t` must be expressible from
//!   `(P1_t, P2_t, U1_t, U2_t, Y1_{t+1}, Y2_{t+1})` (selection map `zeta`),
//! * the next private information `P^i_{t+1}` must be expressible from
//!   `(P^i_t, U^i_t, Y^i_{t+1})` (selection maps `xi`),
//! * `C_t` and `Z_{t+1}` sit inside `C_{t+1}` (selection maps used to run
//!   conditional-mean recursions on realized common histories).
//!
//! Components are ordered canonically by `(stage, kind, controller)` with
//! observations before actions, so every stacked vector in the crate agrees
//! on layout.

use std::collections::BTreeSet;

use crate::linalg::Matrix;
use crate::model::{ComponentId, GameSpec, ModelError};

/// Observation or action component of the information state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ComponentKind {
    Observation,
    Action,
}

/// A concrete signal slice: the whole observation `Y^j_s` or action `U^j_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub kind: ComponentKind,
    pub controller: u8,
    pub stage: usize,
    pub dim: usize,
}

impl Component {
    fn key(&self) -> (usize, ComponentKind, u8) {
        (self.stage, self.kind, self.controller)
    }

    fn matches(&self, kind: ComponentKind, controller: u8, stage: usize) -> bool {
        self.kind == kind && self.controller == controller && self.stage == stage
    }
}

/// An ordered list of components describing one stacked vector.
#[derive(Debug, Clone, Default)]
pub struct ComponentList {
    pub components: Vec<Component>,
}

impl ComponentList {
    fn from_sets(
        spec: &GameSpec,
        obs: &BTreeSet<ComponentId>,
        act: &BTreeSet<ComponentId>,
    ) -> Self {
        let mut components: Vec<Component> = obs
            .iter()
            .map(|id| Component {
                kind: ComponentKind::Observation,
                controller: id.controller,
                stage: id.stage,
                dim: spec.n_y(id.controller, id.stage),
            })
            .chain(act.iter().map(|id| Component {
                kind: ComponentKind::Action,
                controller: id.controller,
                stage: id.stage,
                dim: spec.n_u(id.controller, id.stage),
            }))
            .collect();
        components.sort_by_key(Component::key);
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.iter().map(|c| c.dim).sum()
    }

    /// Offset and width of a component inside the stacked vector.
    pub fn locate(&self, kind: ComponentKind, controller: u8, stage: usize) -> Option<(usize, usize)> {
        let mut offset = 0;
        for c in &self.components {
            if c.matches(kind, controller, stage) {
                return Some((offset, c.dim));
            }
            offset += c.dim;
        }
        None
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Derived information structure for a validated spec.
#[derive(Debug, Clone)]
pub struct InfoMaps {
    /// `C_t` for `t = 1..T`.
    pub common: Vec<ComponentList>,
    /// `P^i_t` for `t = 1..T`, per controller.
    pub private: [Vec<ComponentList>; 2],
    /// `Z_{t+1}` for `t = 1..T-1`.
    pub increments: Vec<ComponentList>,
    /// `zeta[t-1]` maps the stacked `(P1_t, P2_t, U1_t, U2_t, Y1_{t+1}, Y2_{t+1})`
    /// onto `Z_{t+1}`.
    pub zeta: Vec<Matrix>,
    /// `xi[i][t-1]` maps the stacked `(P^i_t, U^i_t, Y^i_{t+1})` onto `P^i_{t+1}`.
    pub xi: [Vec<Matrix>; 2],
    /// `common_in_next[t-1]`: selection with `C_t = M * C_{t+1}`.
    pub common_in_next: Vec<Matrix>,
    /// `increment_in_next[t-1]`: selection with `Z_{t+1} = M * C_{t+1}`.
    pub increment_in_next: Vec<Matrix>,
    state_dims: Vec<usize>,
}

impl InfoMaps {
    pub fn c_dim(&self, t: usize) -> usize {
        self.common[t - 1].dim()
    }

    pub fn p_dim(&self, controller: u8, t: usize) -> usize {
        self.private[controller as usize - 1][t - 1].dim()
    }

    pub fn z_dim(&self, t_next: usize) -> usize {
        self.increments[t_next - 2].dim()
    }

    /// Dimension of the conditioned state `S_t = (X_t, P1_t, P2_t)`.
    pub fn s_dim(&self, t: usize) -> usize {
        self.state_dims[t - 1] + self.p_dim(1, t) + self.p_dim(2, t)
    }

    /// Offset of controller i's private block inside `S_t`.
    pub fn private_offset(&self, controller: u8, t: usize) -> usize {
        match controller {
            1 => self.state_dims[t - 1],
            _ => self.state_dims[t - 1] + self.p_dim(1, t),
        }
    }
}

/// Builds the derived information structure. Fails when an information
/// increment or a private update is not representable through local signals,
/// or when the common information is not nested.
pub fn build_info_maps(spec: &GameSpec) -> Result<InfoMaps, ModelError> {
    let t_max = spec.horizon;
    let common_raw = crate::model::common_sets(spec);

    let common: Vec<ComponentList> = common_raw
        .iter()
        .map(|[obs, act]| ComponentList::from_sets(spec, obs, act))
        .collect();

    let mut private: [Vec<ComponentList>; 2] = [Vec::new(), Vec::new()];
    for i in [1u8, 2] {
        for t in 1..=t_max {
            let obs: BTreeSet<_> = spec.info.observations[i as usize - 1][t - 1]
                .difference(&common_raw[t - 1][0])
                .cloned()
                .collect();
            let act: BTreeSet<_> = spec.info.actions[i as usize - 1][t - 1]
                .difference(&common_raw[t - 1][1])
                .cloned()
                .collect();
            private[i as usize - 1].push(ComponentList::from_sets(spec, &obs, &act));
        }
    }

    let mut increments = Vec::new();
    for t in 1..t_max {
        for kind in [0usize, 1] {
            if let Some(id) = common_raw[t - 1][kind]
                .iter()
                .find(|id| !common_raw[t][kind].contains(*id))
            {
                return Err(ModelError::CommonNotNested { component: *id, stage: t, next: t + 1 });
            }
        }
        let obs: BTreeSet<_> =
            common_raw[t][0].difference(&common_raw[t - 1][0]).cloned().collect();
        let act: BTreeSet<_> =
            common_raw[t][1].difference(&common_raw[t - 1][1]).cloned().collect();
        increments.push(ComponentList::from_sets(spec, &obs, &act));
    }

    // zeta: locate each increment component in the stacked local signals.
    let mut zeta = Vec::new();
    for t in 1..t_max {
        let z = &increments[t - 1];
        let mut entries = Vec::new();
        entries.extend(private[0][t - 1].components.iter().cloned());
        entries.extend(private[1][t - 1].components.iter().cloned());
        entries.push(action_component(spec, 1, t));
        entries.push(action_component(spec, 2, t));
        entries.push(observation_component(spec, 1, t + 1));
        entries.push(observation_component(spec, 2, t + 1));
        let sources = SourceStack { entries };
        let map = sources.select_all(z).map_err(|c| ModelError::IncrementNotRepresentable {
            component: ComponentId { controller: c.controller, stage: c.stage },
            stage: t + 1,
        })?;
        zeta.push(map);
    }

    // xi: each controller's private update from own private, action, fresh obs.
    let mut xi: [Vec<Matrix>; 2] = [Vec::new(), Vec::new()];
    for i in [1u8, 2] {
        for t in 1..t_max {
            let target = &private[i as usize - 1][t];
            let mut entries = private[i as usize - 1][t - 1].components.clone();
            entries.push(action_component(spec, i, t));
            entries.push(observation_component(spec, i, t + 1));
            let sources = SourceStack { entries };
            let map = sources.select_all(target).map_err(|c| ModelError::PrivateNotRepresentable {
                component: ComponentId { controller: c.controller, stage: c.stage },
                controller: i,
                stage: t + 1,
            })?;
            xi[i as usize - 1].push(map);
        }
    }

    // Selections of C_t and Z_{t+1} inside C_{t+1}.
    let mut common_in_next = Vec::new();
    let mut increment_in_next = Vec::new();
    for t in 1..t_max {
        common_in_next.push(select_within(&common[t], &common[t - 1]));
        increment_in_next.push(select_within(&common[t], &increments[t - 1]));
    }

    Ok(InfoMaps {
        common,
        private,
        increments,
        zeta,
        xi,
        common_in_next,
        increment_in_next,
        state_dims: spec.state_dims.clone(),
    })
}

/// Selection matrix extracting `target` components from the `host` stack.
/// Every target component is guaranteed present when the common information
/// is nested, which `build_info_maps` checks first.
fn select_within(host: &ComponentList, target: &ComponentList) -> Matrix {
    let mut out = Matrix::zeros(target.dim(), host.dim());
    let mut r = 0;
    for c in &target.components {
        let (offset, dim) = host
            .locate(c.kind, c.controller, c.stage)
            .expect("nested component must exist in the enclosing stack");
        for k in 0..dim {
            out[(r + k, offset + k)] = 1.0;
        }
        r += c.dim;
    }
    out
}

fn action_component(spec: &GameSpec, controller: u8, stage: usize) -> Component {
    Component {
        kind: ComponentKind::Action,
        controller,
        stage,
        dim: spec.n_u(controller, stage),
    }
}

fn observation_component(spec: &GameSpec, controller: u8, stage: usize) -> Component {
    Component {
        kind: ComponentKind::Observation,
        controller,
        stage,
        dim: spec.n_y(controller, stage),
    }
}

/// A stacked source vector in which target components are searched.
struct SourceStack {
    entries: Vec<Component>,
}

impl SourceStack {
    fn dim(&self) -> usize {
        self.entries.iter().map(|c| c.dim).sum()
    }

    fn locate(&self, c: &Component) -> Option<(usize, usize)> {
        let mut offset = 0;
        for e in &self.entries {
            if e.matches(c.kind, c.controller, c.stage) {
                return Some((offset, e.dim));
            }
            offset += e.dim;
        }
        None
    }

    /// Builds the selection matrix mapping this stack onto `target`, or
    /// returns the first unrepresentable component.
    fn select_all(&self, target: &ComponentList) -> Result<Matrix, Component> {
        let mut out = Matrix::zeros(target.dim(), self.dim());
        let mut r = 0;
        for c in &target.components {
            let (offset, dim) = self.locate(c).ok_or(*c)?;
            debug_assert_eq!(dim, c.dim);
            for k in 0..dim {
                out[(r + k, offset + k)] = 1.0;
            }
            r += c.dim;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::model::ComponentId;

    #[test]
    fn bundled_spec_layout() {
        let spec = examples::two_channel_spec();
        let maps = build_info_maps(&spec).unwrap();
        // Stage 1: nothing common, each controller sees its own channel.
        assert_eq!(maps.c_dim(1), 0);
        assert_eq!(maps.p_dim(1, 1), 1);
        assert_eq!(maps.p_dim(2, 1), 1);
        // Stage 2: both channels and both actions are common; controller 2
        // keeps its fresh observation private.
        assert_eq!(maps.c_dim(2), 4);
        assert_eq!(maps.p_dim(1, 2), 0);
        assert_eq!(maps.p_dim(2, 2), 1);
        // Stage 3: everything is shared.
        assert_eq!(maps.c_dim(3), 6);
        assert_eq!(maps.p_dim(1, 3), 0);
        assert_eq!(maps.p_dim(2, 3), 0);
        // Increments: stage 2 gains (y11, y21, u11, u21); stage 3 gains (y22, u22).
        assert_eq!(maps.z_dim(2), 4);
        assert_eq!(maps.z_dim(3), 2);
        assert_eq!(maps.s_dim(2), 2);
    }

    #[test]
    fn canonical_ordering_is_stage_then_kind_then_controller() {
        let spec = examples::two_channel_spec();
        let maps = build_info_maps(&spec).unwrap();
        let c3: Vec<_> = maps.common[2]
            .components
            .iter()
            .map(|c| (c.stage, matches!(c.kind, ComponentKind::Action), c.controller))
            .collect();
        assert_eq!(
            c3,
            vec![
                (1, false, 1),
                (1, false, 2),
                (1, true, 1),
                (1, true, 2),
                (2, false, 2),
                (2, true, 2)
            ]
        );
    }

    #[test]
    fn zeta_selects_fresh_and_private_signals() {
        let spec = examples::two_channel_spec();
        let maps = build_info_maps(&spec).unwrap();
        // At t=1 the increment is (y11, y21, u11, u21); sources are stacked as
        // (p1=y11 | p2=y21 | u11 | u21 | y12 (dim 0) | y22 (dim 1)).
        let z = &maps.zeta[0];
        assert_eq!(z.shape(), (4, 5));
        assert_eq!(z[(0, 0)], 1.0);
        assert_eq!(z[(1, 1)], 1.0);
        assert_eq!(z[(2, 2)], 1.0);
        assert_eq!(z[(3, 3)], 1.0);
    }

    #[test]
    fn unsharable_increment_is_rejected() {
        let mut spec = examples::two_channel_spec();
        // Controller 2 no longer sees its stage-2 observation when acting at
        // stage 2, yet the component still becomes common at stage 3. The
        // increment is then neither held privately at t=2 nor fresh at t=3:
        // the value would have to come out of thin air.
        spec.info.observations[1][1].remove(&ComponentId { controller: 2, stage: 2 });
        let err = build_info_maps(&spec).unwrap_err();
        assert!(matches!(err, ModelError::IncrementNotRepresentable { .. }), "{err}");
    }

    #[test]
    fn dropping_common_information_is_rejected() {
        let mut spec = examples::two_channel_spec();
        // Common at stage 2 includes u11; forget it at stage 3 (both sides).
        spec.info.actions[0][2].remove(&ComponentId { controller: 1, stage: 1 });
        spec.info.actions[1][2].remove(&ComponentId { controller: 1, stage: 1 });
        let err = build_info_maps(&spec).unwrap_err();
        assert!(matches!(err, ModelError::CommonNotNested { .. }), "{err}");
    }

    #[test]
    fn selections_within_next_common() {
        let spec = examples::two_channel_spec();
        let maps = build_info_maps(&spec).unwrap();
        // C_2 (4 components) inside C_3 (6 components): first four slots.
        let sel = &maps.common_in_next[1];
        assert_eq!(sel.shape(), (4, 6));
        for k in 0..4 {
            assert_eq!(sel[(k, k)], 1.0);
        }
        let selz = &maps.increment_in_next[1];
        assert_eq!(selz.shape(), (2, 6));
        assert_eq!(selz[(0, 4)], 1.0);
        assert_eq!(selz[(1, 5)], 1.0);
    }
}
