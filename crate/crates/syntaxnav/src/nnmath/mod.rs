//! Minimal dense-tensor numerical core: f64 tensors, a reverse-mode tape,
//! the LSTM cell primitive, RMSProp, and a finite-difference gradient
//! oracle for verification.

mod gradcheck;
mod lstm;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{lease_lstm, lstm_cell, register_lstm, LstmParamIds};
pub use optim::{rmsprop_step, RmsPropConfig};
pub use params::{
    fnv1a64, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, ParameterSet,
};
pub use tape::{Gradients, Tape, ValId};
pub use tensor::{log_softmax, softmax, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("non-finite value rejected at creation boundary")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("loss is a constant leaf, not reachable from any recorded operation")]
    DetachedLoss,
    #[error("unknown parameter {name:?}")]
    UnknownParameter { name: String },
    #[error("duplicate parameter {name:?}")]
    DuplicateParameter { name: String },
    #[error("function is not deterministic: two evaluations at the same point disagree")]
    NonDeterministicFunction,
    #[error("finite-difference step {eps} outside [1e-7, 1e-3]")]
    BadEpsilon { eps: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}
