//! Dense rank-1/rank-2 tensors and a single-use reverse-mode gradient tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    check_scalar_fn, finite_difference_check, mixed_precision_check, GradReport, ScalarFn,
};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::{Real, Tensor};

/// Precision used by the training and evaluation pipeline.
#[cfg(not(feature = "f64"))]
pub type Float = f32;
#[cfg(feature = "f64")]
pub type Float = f64;
