//! Minimal reverse-mode autodiff engine: exactly the tensor operations the
//! model needs, plus a finite-difference gradient checker.
//!
//! All arithmetic is in f64, row-major layout, with explicit shape checks on
//! every operation. The tape is rebuilt per forward pass and single-threaded.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, rel_err, CheckParam, GradCheckReport, ParamReport};
pub use ops::sigmoid_scalar;
pub use tape::{Tape, TensorId};
