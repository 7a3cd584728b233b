//! Numerical calculus, degenerate fully nonlinear operators and Hölder
//! regularity measurement on the first Heisenberg group.
//!
//! Module map:
//!
//! - [`hgroup`]: group law, dilations, horizontal frame, `σ`, `P`, `√P`.
//! - [`hcalculus`]: polynomial and finite-difference scalar fields, the
//!   horizontal gradient and symmetrized horizontal Hessian, the lift of
//!   3×3 Hessians to intrinsic 2×2 form.
//! - [`hoperators`]: operator classes, Pucci extremal operators, residuals.
//! - [`sumslab`]: penalty Hessians, block inequalities, trace-gap bounds and
//!   the doubling-of-variables certificate.
//! - [`hsolver`]: monotone frame-aligned finite-difference solver.
//! - [`hregularity`]: modulus of continuity, Hölder seminorm, exponent fit.
//! - [`verify`]: the seeded randomized property suite.

pub mod hcalculus;
pub mod hgroup;
pub mod hoperators;
pub mod hregularity;
pub mod hsolver;
pub mod linalg;
pub mod rng;
pub mod sumslab;
pub mod verify;

pub use hgroup::Point;
pub use linalg::{Sym2, Sym3, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("derivative provider failure: {0}")]
    Derivative(String),
    #[error("polynomial parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("operator form mismatch: {0}")]
    FormMismatch(String),
    #[error("non-finite value at node {node}: {what}")]
    NonFinite { node: usize, what: String },
    #[error("no admissible sample pairs: {0}")]
    EmptySample(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
