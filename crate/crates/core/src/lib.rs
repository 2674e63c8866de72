//! Monte Carlo laboratory for matrix martingale inequalities.
//!
//! Simulates `X_t = ∫ Σ_i H_{i,s} dB^i_s` with symmetric matrix integrands,
//! tracks the quadratic variation, and compares empirical tail and moment
//! statistics against matrix BDG, Freedman, good-λ and Schatten bounds.

pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod integrands;
pub mod matrix;
pub mod montecarlo;
pub mod parallel;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
