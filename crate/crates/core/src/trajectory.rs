//! Exact affine representation of closed-loop trajectories.
//!
//! Under affine control laws every signal in the game is an affine function
//! of the primitive random vector
//!
//! ```text
//! omega = (X_1, W0_1..W0_{T-1}, W1_1..W1_T, W2_1..W2_T)
//! ```
//!
//! which is zero-mean jointly Gaussian with a block-diagonal covariance. This
//! module builds those representations by rolling the dynamics symbolically:
//! a signal is stored as `matrix * omega + offset`. Everything downstream
//! that needs exact second moments (closed-form costs, deviation tests, the
//! strategy-independence check) works on these representations instead of
//! sampling.

use rand::Rng;

use crate::info::{ComponentKind, ComponentList, InfoMaps};
use crate::linalg::{block_diag, Matrix, Vector};
use crate::model::GameSpec;

// ---- primitive-noise layout -----------------------------------------------------

/// Position of every primitive random block inside `omega`.
#[derive(Debug, Clone)]
pub struct OmegaLayout {
    pub dim: usize,
    x1: (usize, usize),
    w0: Vec<(usize, usize)>,
    w1: Vec<(usize, usize)>,
    w2: Vec<(usize, usize)>,
}

impl OmegaLayout {
    pub fn new(spec: &GameSpec) -> Self {
        let mut offset = 0;
        let mut push = |len: usize| {
            let block = (offset, len);
            offset += len;
            block
        };
        let x1 = push(spec.n_x(1));
        let w0 = (1..spec.horizon).map(|t| push(spec.n_x(t + 1))).collect();
        let w1 = (1..=spec.horizon).map(|t| push(spec.n_y(1, t))).collect();
        let w2 = (1..=spec.horizon).map(|t| push(spec.n_y(2, t))).collect();
        Self { dim: offset, x1, w0, w1, w2 }
    }

    /// Block-diagonal covariance of `omega` in layout order.
    pub fn cov(&self, spec: &GameSpec) -> Matrix {
        let mut blocks: Vec<Matrix> = vec![spec.initial_state_cov.clone()];
        blocks.extend(spec.dynamics.iter().map(|d| d.noise_cov.clone()));
        for i in 0..2 {
            blocks.extend(spec.observations[i].iter().map(|o| o.noise_cov.clone()));
        }
        block_diag(&blocks)
    }

    fn selector(&self, (offset, len): (usize, usize)) -> AffineSignal {
        let mut matrix = Matrix::zeros(len, self.dim);
        for k in 0..len {
            matrix[(k, offset + k)] = 1.0;
        }
        AffineSignal { matrix, offset: Vector::zeros(len) }
    }

    pub fn initial_state(&self) -> AffineSignal {
        self.selector(self.x1)
    }

    pub fn process_noise(&self, t: usize) -> AffineSignal {
        self.selector(self.w0[t - 1])
    }

    pub fn observation_noise(&self, controller: u8, t: usize) -> AffineSignal {
        let block = match controller {
            1 => self.w1[t - 1],
            _ => self.w2[t - 1],
        };
        self.selector(block)
    }
}

// ---- affine signals --------------------------------------------------------------

/// A random vector expressed as `matrix * omega + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSignal {
    pub matrix: Matrix,
    pub offset: Vector,
}

impl AffineSignal {
    pub fn zeros(dim: usize, omega_dim: usize) -> Self {
        Self { matrix: Matrix::zeros(dim, omega_dim), offset: Vector::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Left-multiplies by a matrix: `m * self`.
    pub fn map(&self, m: &Matrix) -> Self {
        Self { matrix: m * &self.matrix, offset: m * &self.offset }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix + &other.matrix, offset: &self.offset + &other.offset }
    }

    pub fn shift(&self, v: &Vector) -> Self {
        Self { matrix: self.matrix.clone(), offset: &self.offset + v }
    }

    pub fn stack(parts: &[&AffineSignal], omega_dim: usize) -> Self {
        let dim: usize = parts.iter().map(|p| p.dim()).sum();
        let mut out = Self::zeros(dim, omega_dim);
        let mut r = 0;
        for p in parts {
            out.matrix.view_mut((r, 0), (p.dim(), omega_dim)).copy_from(&p.matrix);
            out.offset.rows_mut(r, p.dim()).copy_from(&p.offset);
            r += p.dim();
        }
        out
    }

    pub fn evaluate(&self, omega: &Vector) -> Vector {
        &self.matrix * omega + &self.offset
    }

    /// `E[self]` (omega is zero-mean).
    pub fn mean(&self) -> &Vector {
        &self.offset
    }

    pub fn covariance(&self, omega_cov: &Matrix) -> Matrix {
        &self.matrix * omega_cov * self.matrix.transpose()
    }

    pub fn cross_covariance(&self, other: &Self, omega_cov: &Matrix) -> Matrix {
        &self.matrix * omega_cov * other.matrix.transpose()
    }

    /// `E[self^T R self]` for symmetric `R`.
    pub fn expected_quadratic(&self, r: &Matrix, omega_cov: &Matrix) -> f64 {
        (r * self.covariance(omega_cov)).trace() + (self.offset.transpose() * r * &self.offset)[0]
    }
}

// ---- affine control laws ----------------------------------------------------------

/// One controller's decision rule at one stage:
/// `u = gain_private * p + gain_common * c + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineControlLaw {
    pub gain_private: Matrix,
    pub gain_common: Matrix,
    pub intercept: Vector,
}

impl AffineControlLaw {
    pub fn zeros(n_u: usize, p_dim: usize, c_dim: usize) -> Self {
        Self {
            gain_private: Matrix::zeros(n_u, p_dim),
            gain_common: Matrix::zeros(n_u, c_dim),
            intercept: Vector::zeros(n_u),
        }
    }

    pub fn apply(&self, private: &AffineSignal, common: &AffineSignal) -> AffineSignal {
        private
            .map(&self.gain_private)
            .add(&common.map(&self.gain_common))
            .shift(&self.intercept)
    }

    /// Evaluates the law on realized information vectors.
    pub fn decide(&self, private: &Vector, common: &Vector) -> Vector {
        &self.gain_private * private + &self.gain_common * common + &self.intercept
    }
}

/// A full strategy profile: per controller, one law per decision stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    pub laws: [Vec<AffineControlLaw>; 2],
}

impl StrategyProfile {
    pub fn zeros(spec: &GameSpec, maps: &InfoMaps) -> Self {
        let laws = [1u8, 2].map(|i| {
            (1..spec.horizon)
                .map(|t| AffineControlLaw::zeros(spec.n_u(i, t), maps.p_dim(i, t), maps.c_dim(t)))
                .collect()
        });
        Self { laws }
    }

    /// A random profile with bounded gains and intercepts, used to probe
    /// strategy dependence of beliefs.
    pub fn random(spec: &GameSpec, maps: &InfoMaps, rng: &mut impl Rng) -> Self {
        fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
            Matrix::from_fn(r, c, |_, _| rng.gen::<f64>() * 1.6 - 0.8)
        }
        let mut laws: [Vec<AffineControlLaw>; 2] = [Vec::new(), Vec::new()];
        for i in [1u8, 2] {
            for t in 1..spec.horizon {
                let n_u = spec.n_u(i, t);
                let gain_private = rand_mat(rng, n_u, maps.p_dim(i, t));
                let gain_common = rand_mat(rng, n_u, maps.c_dim(t));
                let intercept = Vector::from_fn(n_u, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                laws[i as usize - 1].push(AffineControlLaw {
                    gain_private,
                    gain_common,
                    intercept,
                });
            }
        }
        Self { laws }
    }

    pub fn law(&self, controller: u8, t: usize) -> &AffineControlLaw {
        &self.laws[controller as usize - 1][t - 1]
    }
}

// ---- closed-loop signal table -----------------------------------------------------

/// Every closed-loop signal as an affine function of `omega`.
#[derive(Debug, Clone)]
pub struct SignalTable {
    pub layout: OmegaLayout,
    pub omega_cov: Matrix,
    /// `x[t-1]` for `t = 1..T`.
    pub x: Vec<AffineSignal>,
    /// `y[i][t-1]` for `t = 1..T`.
    pub y: [Vec<AffineSignal>; 2],
    /// `u[i][t-1]` for `t = 1..T-1`.
    pub u: [Vec<AffineSignal>; 2],
    /// Common information `c[t-1]` for `t = 1..T`.
    pub common: Vec<AffineSignal>,
    /// Private information `private[i][t-1]` for `t = 1..T`.
    pub private: [Vec<AffineSignal>; 2],
}

impl SignalTable {
    /// The signal for one observation/action component.
    pub fn component(&self, kind: ComponentKind, controller: u8, stage: usize) -> &AffineSignal {
        let i = controller as usize - 1;
        match kind {
            ComponentKind::Observation => &self.y[i][stage - 1],
            ComponentKind::Action => &self.u[i][stage - 1],
        }
    }

    /// Stacks the signals of a component list in its canonical order.
    pub fn stack_components(&self, list: &ComponentList) -> AffineSignal {
        let parts: Vec<&AffineSignal> = list
            .components
            .iter()
            .map(|c| self.component(c.kind, c.controller, c.stage))
            .collect();
        AffineSignal::stack(&parts, self.layout.dim)
    }

    /// `S_t = (X_t, P1_t, P2_t)`.
    pub fn stacked_state(&self, t: usize) -> AffineSignal {
        AffineSignal::stack(
            &[&self.x[t - 1], &self.private[0][t - 1], &self.private[1][t - 1]],
            self.layout.dim,
        )
    }
}

/// Rolls the closed loop under `profile` symbolically.
pub fn build_signals(spec: &GameSpec, maps: &InfoMaps, profile: &StrategyProfile) -> SignalTable {
    let layout = OmegaLayout::new(spec);
    let omega_cov = layout.cov(spec);
    let t_max = spec.horizon;

    let mut x: Vec<AffineSignal> = vec![layout.initial_state()];
    let mut y: [Vec<AffineSignal>; 2] = [Vec::new(), Vec::new()];
    let mut u: [Vec<AffineSignal>; 2] = [Vec::new(), Vec::new()];
    let mut common: Vec<AffineSignal> = Vec::new();
    let mut private: [Vec<AffineSignal>; 2] = [Vec::new(), Vec::new()];

    // Assemble an information vector from components built so far.
    let gather = |list: &ComponentList,
                  y: &[Vec<AffineSignal>; 2],
                  u: &[Vec<AffineSignal>; 2]|
     -> AffineSignal {
        let parts: Vec<&AffineSignal> = list
            .components
            .iter()
            .map(|c| {
                let i = c.controller as usize - 1;
                match c.kind {
                    ComponentKind::Observation => &y[i][c.stage - 1],
                    ComponentKind::Action => &u[i][c.stage - 1],
                }
            })
            .collect();
        AffineSignal::stack(&parts, layout.dim)
    };

    for t in 1..=t_max {
        for i in [1u8, 2] {
            let ch = &spec.observations[i as usize - 1][t - 1];
            let signal = x[t - 1].map(&ch.h).add(&layout.observation_noise(i, t));
            y[i as usize - 1].push(signal);
        }
        common.push(gather(&maps.common[t - 1], &y, &u));
        for i in [1u8, 2] {
            private[i as usize - 1].push(gather(&maps.private[i as usize - 1][t - 1], &y, &u));
        }
        if t < t_max {
            for i in [1u8, 2] {
                let law = profile.law(i, t);
                u[i as usize - 1].push(law.apply(&private[i as usize - 1][t - 1], &common[t - 1]));
            }
            let d = &spec.dynamics[t - 1];
            let next = x[t - 1]
                .map(&d.a)
                .add(&u[0][t - 1].map(&d.b1))
                .add(&u[1][t - 1].map(&d.b2))
                .add(&layout.process_noise(t));
            x.push(next);
        }
    }

    SignalTable { layout, omega_cov, x, y, u, common, private }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::info::build_info_maps;
    use approx::assert_relative_eq;

    fn table_for(profile_gain: Option<f64>) -> (SignalTable, StrategyProfile) {
        let spec = examples::two_channel_spec();
        let maps = build_info_maps(&spec).unwrap();
        let mut profile = StrategyProfile::zeros(&spec, &maps);
        if let Some(g) = profile_gain {
            // controller 1 at stage 1 plays u = g * y11 (its private signal)
            profile.laws[0][0].gain_private[(0, 0)] = g;
        }
        (build_signals(&spec, &maps, &profile), profile)
    }

    #[test]
    fn open_loop_state_accumulates_noise() {
        let (table, _) = table_for(None);
        // x2 = x1 + w0_1 under the zero profile; omega = (x1, w01, w02, w11, w21, w22).
        let x2 = &table.x[1];
        assert_eq!(x2.matrix.ncols(), 6);
        assert_relative_eq!(x2.matrix[(0, 0)], 1.0);
        assert_relative_eq!(x2.matrix[(0, 1)], 1.0);
        assert_relative_eq!(x2.matrix.row(0).iter().map(|v| v.abs()).sum::<f64>(), 2.0);
    }

    #[test]
    fn observation_moments_match_hand_values() {
        let (table, _) = table_for(None);
        let y11 = &table.y[0][0];
        let y21 = &table.y[1][0];
        assert_relative_eq!(y11.covariance(&table.omega_cov)[(0, 0)], 2.0);
        assert_relative_eq!(y11.cross_covariance(y21, &table.omega_cov)[(0, 0)], 1.0);
        assert_relative_eq!(
            y11.expected_quadratic(&Matrix::from_element(1, 1, 1.0), &table.omega_cov),
            2.0
        );
    }

    #[test]
    fn control_law_feeds_back_into_state() {
        let (table, _) = table_for(Some(0.5));
        // u1_1 = 0.5 y11 = 0.5 x1 + 0.5 w11.
        let u11 = &table.u[0][0];
        assert_relative_eq!(u11.matrix[(0, 0)], 0.5);
        assert_relative_eq!(u11.matrix[(0, 3)], 0.5);
        // x2 = x1 + u1_1 + w0_1.
        let x2 = &table.x[1];
        assert_relative_eq!(x2.matrix[(0, 0)], 1.5);
        assert_relative_eq!(x2.matrix[(0, 3)], 0.5);
        assert_relative_eq!(x2.matrix[(0, 1)], 1.0);
    }

    #[test]
    fn evaluate_matches_manual_roll() {
        let (table, profile) = table_for(Some(-0.3));
        let omega = Vector::from_vec(vec![0.7, -0.2, 0.4, 1.1, -0.5, 0.9]);
        let (x1, w01, w02, w11, w21, w22) =
            (omega[0], omega[1], omega[2], omega[3], omega[4], omega[5]);
        let y11 = x1 + w11;
        let y21 = x1 + w21;
        let u11 = -0.3 * y11;
        let x2 = x1 + u11 + w01;
        let y22 = x2 + w22;
        let x3 = x2 + w02;
        assert_relative_eq!(table.y[0][0].evaluate(&omega)[0], y11);
        assert_relative_eq!(table.y[1][0].evaluate(&omega)[0], y21);
        assert_relative_eq!(table.u[0][0].evaluate(&omega)[0], u11, epsilon = 1e-14);
        assert_relative_eq!(table.x[1].evaluate(&omega)[0], x2, epsilon = 1e-14);
        assert_relative_eq!(table.y[1][1].evaluate(&omega)[0], y22, epsilon = 1e-14);
        assert_relative_eq!(table.x[2].evaluate(&omega)[0], x3, epsilon = 1e-14);
        let _ = profile;
    }

    #[test]
    fn stacked_state_and_common_layout() {
        let (table, _) = table_for(None);
        // S_2 = (x_2, p2 = y22); C_2 = (y11, y21, u11, u21).
        assert_eq!(table.stacked_state(2).dim(), 2);
        assert_eq!(table.common[1].dim(), 4);
        assert_eq!(table.private[1][1].dim(), 1);
        assert_eq!(table.private[0][1].dim(), 0);
    }

    #[test]
    fn random_profiles_are_seed_deterministic() {
        use rand::SeedableRng;
        let spec = examples::two_channel_spec();
        let maps = build_info_maps(&spec).unwrap();
        let a = StrategyProfile::random(&spec, &maps, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        let b = StrategyProfile::random(&spec, &maps, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
