//! Desk-scale laboratory for distributionally robust offline model-based
//! policy optimization on finite MDPs.
//!
//! The crate is organized around a ground-truth oracle layer ([`mdp`]) that
//! solves finite MDPs exactly with dense linear algebra, an offline data
//! layer ([`data`], [`model`]), the chi-square robust-optimization core
//! ([`dro`]), the conservative critic and its executable theory checkers
//! ([`critic`], [`linear`]), baselines ([`baselines`]), the end-to-end
//! actor-critic loop ([`train`]), built-in benchmark environments ([`envs`])
//! and the verification suites ([`verify`]) that drive every checker over
//! seeded random instances.
//!
//! Everything is deterministic given an explicit seed; no operation draws
//! from a global RNG.

pub mod baselines;
pub mod critic;
pub mod data;
pub mod dro;
pub mod envs;
pub mod linear;
pub mod mdp;
pub mod model;
pub mod train;
pub mod verify;

mod sample;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid distribution ({context}): {detail}")]
    InvalidDistribution { context: String, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("iteration did not converge: residual {residual:.3e} after {iters} iterations")]
    NonConvergence { residual: f64, iters: usize },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub use critic::{CriticConfig, InterpConvention, InterpolatedWorld};
pub use data::{CountTable, Dataset, Transition};
pub use dro::{ChiSquareBall, FiniteDistribution};
pub use mdp::{BoundConstants, OccupancyVector, PolicyTable, QTable, TabularMdp};
pub use model::LearnedModel;
