//! Dense `f64` tensors, reverse-mode differentiation and deterministic
//! randomness.

mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::gradient_check;
pub use params::{bind_constants, bind_params, collect_grads, flatten, unflatten, Parameters};
pub use rng::{sample_normal, sample_standard_normal, RngState};
pub use tape::{softmax, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KernelError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}: non-finite or out-of-domain input")]
    NumericDomain(&'static str),
    #[error("{0}")]
    Contract(String),
}
