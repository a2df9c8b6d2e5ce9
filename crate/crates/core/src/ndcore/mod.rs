//! Dense tensors, reverse-mode differentiation and Adam.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, finite_difference_check, GradCheckConfig, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{Linear, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{affine_forward, argmax_rows, matmul, softmax_rows, Real, Tensor};
