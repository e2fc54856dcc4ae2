//! Dense numeric kernel: matrices, the differentiable operations the model
//! needs, and a finite-difference gradient checker.

pub mod gradcheck;
mod matrix;
pub mod ops;

pub use gradcheck::{finite_diff_check, GradCheckReport, NamedTensors, Parameters};
pub use matrix::Matrix;
pub use ops::{cross_entropy, rms_norm, row_softmax, IGNORE};
