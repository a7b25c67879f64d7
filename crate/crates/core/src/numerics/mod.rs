//! Dense tensors, the seeded generator and the finite-difference oracle.

mod gradcheck;
pub mod math;
mod rng;
mod tensor;

pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error, DEFAULT_FD_STEP};
pub use rng::{seeded_fill_uniform, Rng};
pub use tensor::{pad_to_multiple, Tensor};
