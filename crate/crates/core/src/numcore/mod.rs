//! Dense tensors, reverse-mode autodiff, and the Adam optimizer.

mod adam;
mod init;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use init::{normal_init, xavier_uniform};
pub use tape::{softmax, Gradients, ParamId, ParamStore, Segments, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}
