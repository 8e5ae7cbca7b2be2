//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every adjoint is itself expressed with tape ops, so gradients can be recorded and
//! differentiated again (`Tape::grad(.., create_graph = true)`). `layernorm` and the
//! GELU derivative are first-order only and refuse to participate in such graphs.

mod backward;
mod ops;
mod tape;

pub use backward::Gradients;
pub use tape::{checks_enabled, Tape, Var};
