//! Reverse-mode automatic differentiation and its finite-difference oracle.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_difference_at, finite_difference_grad, relative_error};
pub use tape::{Tape, Var};
