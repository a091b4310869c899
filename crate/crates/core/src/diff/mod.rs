//! Reverse-mode differentiation over 2-D arrays and finite-difference checks.

pub mod check;
pub mod geometry;
pub mod tape;

pub use check::{gradcheck_model, GradReport, GradcheckOptions};
pub use tape::{Gradients, Mat, Tape, Unary, Var};
