//! Solver for two-controller finite-horizon linear-Gaussian dynamic games
//! with asymmetric information.
//!
//! The game has state dynamics `X_{t+1} = A_t X_t + B1_t U1_t + B2_t U2_t + W0_t`
//! and per-controller observations `Yi_t = Hi_t X_t + Wi_t`, with quadratic
//! costs. Who knows what is described by index sets: whatever both
//! controllers know is *common information*, the rest is *private*. Under two
//! structural assumptions (the common information only grows and is refreshed
//! through locally available signals; the belief given common information
//! does not depend on the strategies) the game is solved by backward
//! induction over an equivalent game whose state is the conditional mean
//! `M_t = E[S_t | common info]` of `S_t = (X_t, P1_t, P2_t)`:
//!
//! 1. [`belief`] propagates the conditional covariance `Σ_t` and the affine
//!    mean update `M_{t+1} = F1_M M_t + F1_Z Z_{t+1}` driven by the common
//!    information increment `Z_{t+1}`.
//! 2. [`induction`] walks backward, at each stage lifting the quadratic
//!    continuation value into a static Bayesian game over `(S_t, U1, U2)`.
//! 3. [`stage_game`] solves that static game in closed form: gains via a
//!    Stein-type matrix equation, intercepts via a coupled linear system,
//!    values re-assembled as quadratics in `M_t`.
//! 4. [`verifier`] turns the per-stage solution into explicit control laws
//!    over raw signals, computes closed-form equilibrium costs, simulates,
//!    and checks the Nash property by exact best-response deviation tests.
//!
//! Everything is plain dense linear algebra over [`linalg::Matrix`]; no
//! sampling is involved anywhere except in the Monte-Carlo verifier and the
//! randomized independence check.

pub mod belief;
pub mod examples;
pub mod info;
pub mod json;
pub mod linalg;
pub mod model;
pub mod stage_game;
pub mod trajectory;

pub mod induction;
pub mod verifier;

pub use linalg::{Matrix, Vector};
pub use model::{GameSpec, InfoStructure, ModelError, ValidateOptions, ValidationReport};
