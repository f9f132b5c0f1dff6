//! Dyadic-time solvers for long-run risk-sensitive impulse control of
//! finite-state Markov chains.

pub mod error;
pub mod finite_horizon;
pub mod mc_simulation;
pub mod cost_model;
pub mod dyadic_solver;
pub mod numeric;
pub mod reference_models;
pub mod semigroup_mpe;
pub mod state_models;
pub mod stopping_solver;

pub use error::{Error, Result};
