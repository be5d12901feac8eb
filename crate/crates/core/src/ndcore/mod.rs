//! Dense `f64` tensors and a reverse-mode gradient tape.
//!
//! Every cell kernel and loss in the crate is expressed as a sequence of
//! [`Tape`] operations. A tape is built fresh for each training step and
//! dropped after its backward pass.

mod tape;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tape::{softmax_xent, Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum NdError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("column slice {start}..{} out of range for {cols} columns", start + len)]
    Slice { cols: usize, start: usize, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("softmax needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("{labels} labels do not tile logits {logits:?} in blocks of {classes}")]
    Labels {
        logits: Vec<usize>,
        labels: usize,
        classes: usize,
    },
    #[error("{weights} row weights for {rows} rows")]
    Weights { rows: usize, weights: usize },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
}

/// Elementwise nonlinearities used by the cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    /// Relu uses the zero subgradient at the kink.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies `kind` elementwise without recording.
pub fn activate(kind: Activation, x: &Tensor) -> Tensor {
    x.map(|v| kind.apply(v))
}
