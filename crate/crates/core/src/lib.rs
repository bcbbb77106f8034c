//! Adaptive strategies for two-player zero-sum linear-quadratic stochastic
//! differential games whose system matrices are unknown to both players.
//!
//! The pipeline, per trajectory:
//!
//! 1. [`estimator`]: weighted least squares on the observed state increments,
//!    with random regularization at each integer epoch so that the estimated
//!    pair stays uniformly controllable.
//! 2. [`strategy`]: certainty-equivalent Nash gains from the estimated game
//!    Riccati equation ([`riccati`]), or a Gramian stabilizer when no
//!    suitable solution exists, plus a diminishing Wiener dither.
//! 3. [`sim`]: Euler–Maruyama integration of the closed loop.
//!
//! [`diagnostics`] packages the stability, consistency and Nash-equilibrium
//! properties as seeded ensemble experiments.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod model;
pub mod output;
pub mod riccati;
pub mod rng;
pub mod sim;
pub mod strategy;

pub use error::{GameError, Result};
