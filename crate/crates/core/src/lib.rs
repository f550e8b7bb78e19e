//! Penalized direct transcription of state- and mixed-constrained optimal
//! control problems, extraction of maximum-principle multipliers
//! `(λ₀, p, μ, γ, q)` from the converged solves, and a numerical checker for
//! the resulting necessary conditions and their standing hypotheses.

pub mod checker;
pub mod cli;
mod error;
pub mod multipliers;
pub mod nonsmooth;
pub mod problem;
pub mod report;
pub mod solver;
pub mod transcription;

pub use error::{Error, Result};
