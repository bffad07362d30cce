//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] borrows a [`Params`] store, records every forward operation
//! together with the data its backward rule needs, and
//! [`Tape::backward`] walks the record in reverse to produce one gradient
//! per parameter. All values are `f64`.

mod nn;
mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use nn::{affine, bilstm, lstm_cell, BiLstmLayer, LstmWeights};
pub use optim::{Adam, AdamConfig, Sgd};
pub use tape::{Tape, Var};
pub use tensor::{Gradients, ParamId, Params, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite output")]
    Numeric { op: &'static str },
    #[error("{0}")]
    State(String),
}

#[cfg(test)]
mod tests;
