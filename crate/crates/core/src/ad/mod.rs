//! Evaluation tapes and their piecewise linearizations.

mod model;
mod tape;

pub(crate) use model::sign;
pub use model::{
    linearize_secant, linearize_tangent, LinearizationMode, PLModel, Signature, SECANT_DEGENERACY,
};
pub use tape::{Evaluation, Node, Tape, TapeBuilder, UnaryOp, Var};
