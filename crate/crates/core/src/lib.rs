//! Integration of Lipschitzian initial value problems `ẋ = F(x)` whose right
//! hand side is a composite piecewise differentiable function.
//!
//! `F` is recorded as a [`Tape`](ad::Tape) over smooth elementals plus `abs`.
//! The integrators replace `F` along each step by its secant (or tangent)
//! piecewise linear model and integrate that model exactly, breakpoint by
//! breakpoint. This keeps the local error of the trapezoidal rule at third
//! order across kinks, yields a piecewise quadratic dense output, and conserves
//! energy for piecewise linear Hamiltonian systems.

pub mod ad;
pub mod control;
pub mod dense;
pub mod error;
pub mod integrate;
pub mod norm;
pub mod problems;
pub mod segment;

pub use error::{Error, Result};
