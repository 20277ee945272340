//! Dense matrices and a small reverse-mode differentiation tape.

mod expm;
mod gradcheck;
mod matrix;
mod tape;

pub use expm::{expm, trace_expm_hadamard};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions};
pub use matrix::{Matrix, SparseRows};
pub use tape::{sigmoid, Gradients, Tape, Var, FOCAL_CLAMP, MASK_THRESHOLD};
