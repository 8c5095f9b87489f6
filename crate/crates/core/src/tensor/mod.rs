//! Dense row-major matrices and a reverse-mode tape over them.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{Gradient, Tape, Var};
