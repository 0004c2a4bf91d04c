//! Dense linear algebra and reverse-mode differentiation.

pub mod matrix;
pub mod ops;
pub mod tape;

pub use matrix::Matrix;
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};
