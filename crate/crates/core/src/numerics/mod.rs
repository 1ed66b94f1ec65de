//! Dense tensors, deterministic random streams and a finite-difference
//! gradient oracle. Everything else in the crate is built on these.

mod gradcheck;
mod rng;
mod tensor;

pub use gradcheck::{finite_diff_grad, relative_error, DEFAULT_STEP};
pub use rng::Rng;
pub use tensor::{dot, l2_normalize_rows_backward, Tensor};
