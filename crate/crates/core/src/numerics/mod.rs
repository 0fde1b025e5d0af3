//! Dense f64 linear algebra, deterministic sampling, Adam, a small
//! reverse-mode tape, and finite-difference gradient verification.

mod adam;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::gradient_check;
pub use params::{ParamGrads, ParamStore};
pub use rng::{sample_categorical, Rng};
pub use tape::{NodeId, Tape};
pub use tensor::{argmax, dot, log_softmax, matvec, softmax, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("empty input to {context}")]
    Empty { context: &'static str },
    #[error("categorical weights sum to zero")]
    ZeroMass,
    #[error("negative categorical weight {value}")]
    NegativeWeight { value: f64 },
}
