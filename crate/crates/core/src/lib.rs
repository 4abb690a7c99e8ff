//! Multi-source influenza hospitalization forecasting with poverty-stratified
//! evaluation.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] parses and aligns weekly surveillance panels and forms poverty
//!   quartiles.
//! * [`spline`] evaluates the B-spline basis used to expand each predictor.
//! * [`design`] builds lagged level/slope/acceleration features and their
//!   spline expansion.
//! * [`glm`] fits lasso-penalized Poisson or Gaussian regressions and selects
//!   the penalty by cross-validation.
//! * [`evaluation`] scores forecasts (population-normalized out-of-sample RMSE,
//!   held-out likelihood, residual sign-flip test).
//! * [`inference`] compares poverty groups: permutation test, synchrony,
//!   PCA and the zip-level burden regression.
//! * [`synthetic`] generates seeded panels with known ground truth.
//! * [`pipeline`] wires everything into reproducible, configuration-driven runs.
//!
//! Monte Carlo loops (leave-one-out refits, cross-validation folds,
//! permutation repeats) run on rayon when the `parallel` feature is enabled
//! and fall back to plain iterators otherwise. Results never depend on the
//! schedule: every task draws from its own derived seed and outputs are
//! collected in index order.

pub mod data;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod glm;
pub mod inference;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod spline;
pub mod synthetic;

pub use error::{Error, Result};
